//! Write-ahead partial results file.
//!
//! ```text
//! # probegrid-partial v1 <provenance digest>
//! <result rows of one cell>
//! # done <cell key>
//! ...
//! ```
//!
//! Rows after the last `# done` line belong to an interrupted cell and are
//! discarded on resume.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::results::{format_rows, parse_rows};
use crate::error::GridError;
use crate::model::ProbeResult;

const MAGIC: &str = "# probegrid-partial v1 ";
const DONE: &str = "# done ";

pub(crate) struct Checkpoint {
    path: PathBuf,
    out: BufWriter<File>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GridError + '_ {
    move |source| GridError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Completed cells recorded in an existing partial file, if its digest
/// matches.
pub(crate) fn read_completed(
    path: &Path,
    digest: &str,
) -> Result<HashMap<String, Vec<ProbeResult>>, GridError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashMap::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(first) if first.trim_end() == format!("{MAGIC}{digest}") => {}
        _ => {
            log::warn!(
                "{}: provenance differs from this run; starting over",
                path.display()
            );
            return Ok(HashMap::new());
        }
    }
    let mut done = HashMap::new();
    let mut pending = String::new();
    for line in lines {
        if let Some(key) = line.strip_prefix(DONE) {
            // An unterminated marker means the write was cut short.
            let Some(key) = key.strip_suffix('\n') else { break };
            done.insert(key.to_string(), parse_rows(&pending)?);
            pending.clear();
        } else {
            pending.push_str(line);
        }
    }
    Ok(done)
}

impl Checkpoint {
    /// Rewrites `path` to hold exactly the given completed cells, then
    /// keeps it open for appending.
    pub(crate) fn create(
        path: &Path,
        digest: &str,
        completed: &[(&String, &Vec<ProbeResult>)],
    ) -> Result<Self, GridError> {
        let tmp = path.with_extension("partial.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            writeln!(w, "{MAGIC}{digest}").map_err(io_err(&tmp))?;
            for (key, rows) in completed {
                w.write_all(format_rows(rows).as_bytes()).map_err(io_err(&tmp))?;
                writeln!(w, "{DONE}{key}").map_err(io_err(&tmp))?;
            }
            w.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub(crate) fn commit(&mut self, key: &str, rows: &[ProbeResult]) -> Result<(), GridError> {
        let path = self.path.clone();
        self.out
            .write_all(format_rows(rows).as_bytes())
            .map_err(io_err(&path))?;
        writeln!(self.out, "{DONE}{key}").map_err(io_err(&path))?;
        self.out.flush().map_err(io_err(&path))
    }
}
