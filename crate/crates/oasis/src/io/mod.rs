//! On-disk formats: palette PNG masks, the benchmark dataset layout,
//! checkpoints, visualisations and submission archives.

pub mod checkpoint;
pub mod layout;
pub mod png;
pub mod viz;

use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

/// Zips every file under `dir` (paths relative to `dir`) into `archive`.
pub fn zip_dir(dir: &Path, archive: &Path) -> Result<usize> {
    let file = std::fs::File::create(archive).map_err(|e| Error::io(archive, e))?;
    let mut zip = zip::ZipWriter::new(file);
    let opts = zip::write::SimpleFileOptions::default()
        .compression_method(zip::CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default());
    let mut stack = vec![dir.to_path_buf()];
    let mut files = Vec::new();
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p != archive {
                files.push(p);
            }
        }
    }
    files.sort();
    let fail = |e: zip::result::ZipError| Error::format(archive, e.to_string());
    for p in &files {
        let rel = p.strip_prefix(dir).expect("walked below dir");
        let name = rel.to_string_lossy().replace('\\', "/");
        zip.start_file(name, opts).map_err(fail)?;
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        zip.write_all(&bytes).map_err(|e| Error::io(archive, e))?;
    }
    zip.finish().map_err(fail)?;
    Ok(files.len())
}
