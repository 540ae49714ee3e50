//! Reading inputs, writing `PREFIX.<ext>` outputs and the run manifest.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    fn of(path: &str, data: &[u8]) -> Self {
        FileDigest {
            path: path.to_string(),
            sha256: hex::encode(Sha256::digest(data)),
            bytes: data.len() as u64,
        }
    }
}

/// Everything needed to repeat a run: the full argument list (config
/// expanded) plus digests of what went in and came out.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub program: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub threads: usize,
    pub duration_s: f64,
}

/// Where results go. With no prefix the JSON summary is printed; with `-`
/// the main table (or stream) is printed; otherwise files are written.
#[derive(Debug, Clone, PartialEq, Eq)]
enum Sink {
    Summary,
    Stdout,
    Files(String),
}

pub(crate) struct Session {
    command: String,
    argv: Vec<String>,
    started: Instant,
    sink: Sink,
    force: bool,
    claimed: Vec<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl Session {
    pub fn new(command: &str, argv: Vec<String>, out: Option<&str>, force: bool) -> Self {
        let sink = match out {
            None => Sink::Summary,
            Some("-") => Sink::Stdout,
            Some(p) => Sink::Files(p.to_string()),
        };
        Session {
            command: command.to_string(),
            argv,
            started: Instant::now(),
            sink,
            force,
            claimed: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn path(prefix: &str, ext: &str) -> String {
        format!("{prefix}.{ext}")
    }

    /// Reserves the output extensions this command will write, failing
    /// before any work if one exists and `--force` was not given.
    pub fn claim(&mut self, exts: &[&str]) -> Result<(), CliError> {
        self.claimed = exts.iter().map(|s| s.to_string()).collect();
        if let Sink::Files(prefix) = &self.sink {
            for ext in exts.iter().copied().chain(["manifest.json"]) {
                let p = Self::path(prefix, ext);
                if !self.force && Path::new(&p).exists() {
                    return Err(CliError::Usage(format!(
                        "{p} exists; pass --force to overwrite"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_input(&mut self, path: &str) -> Result<Vec<u8>, CliError> {
        let data = if path == "-" {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| CliError::io("<stdin>", e))?;
            buf
        } else {
            fs::read(path).map_err(|e| CliError::io(path, e))?
        };
        self.inputs.push(FileDigest::of(path, &data));
        Ok(data)
    }

    /// Writes one output. `primary` marks the piece that goes to stdout
    /// under `--out -`; the JSON summary is the one printed by default.
    pub fn emit(&mut self, ext: &str, data: &[u8], primary: bool) -> Result<(), CliError> {
        debug_assert!(
            self.claimed.iter().any(|c| c == ext),
            "unclaimed output {ext}"
        );
        match &self.sink {
            Sink::Summary if ext == "json" => stdout(data),
            Sink::Stdout if primary => stdout(data),
            Sink::Files(prefix) => {
                let p = Self::path(prefix, ext);
                fs::write(&p, data).map_err(|e| CliError::io(&p, e))?;
                log::info!("wrote {p}");
                self.outputs.push(FileDigest::of(&p, data));
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn emit_json<T: Serialize>(&mut self, value: &T, primary: bool) -> Result<(), CliError> {
        let mut text =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        text.push(b'\n');
        self.emit("json", &text, primary)
    }

    pub fn emit_csv(&mut self, ext: &str, table: Table, primary: bool) -> Result<(), CliError> {
        self.emit(ext, &table.into_bytes()?, primary)
    }

    pub fn finish(self) -> Result<(), CliError> {
        let Sink::Files(prefix) = &self.sink else {
            return Ok(());
        };
        let manifest = Manifest {
            program: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.clone(),
            argv: self.argv.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            threads: rayon::current_num_threads(),
            duration_s: self.started.elapsed().as_secs_f64(),
        };
        let p = Self::path(prefix, "manifest.json");
        let mut text =
            serde_json::to_vec_pretty(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
        text.push(b'\n');
        fs::write(&p, text).map_err(|e| CliError::io(&p, e))
    }
}

fn stdout(data: &[u8]) -> Result<(), CliError> {
    let mut out = std::io::stdout().lock();
    out.write_all(data)
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io("<stdout>", e))
}

/// Shortest round-trip text for a float, in exponent form when very large
/// or small.
pub(crate) fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// A CSV table built row by row.
pub(crate) struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(headers).map_err(csv_err)?;
        Ok(Table { writer })
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), CliError> {
        self.writer
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .map_err(csv_err)
    }

    fn into_bytes(self) -> Result<Vec<u8>, CliError> {
        self.writer
            .into_inner()
            .map_err(|e| CliError::Input(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Input(format!("csv: {e}"))
}

/// Numeric columns of a CSV file with a header row.
pub(crate) struct Columns {
    pub headers: Vec<String>,
    pub rows: Vec<csv::StringRecord>,
}

impl Columns {
    pub fn parse(data: &[u8]) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(data);
        let headers = rdr
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = rdr
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(csv_err)?;
        Ok(Columns { headers, rows })
    }

    /// Column named `name`, or else the one at `fallback`.
    pub fn index(&self, name: &str, fallback: usize) -> Result<usize, CliError> {
        match self.headers.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None if fallback < self.headers.len() => Ok(fallback),
            None => Err(CliError::Input(format!("missing column {name}"))),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    pub fn floats(&self, col: usize) -> Result<Vec<f64>, CliError> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let s = r.get(col).unwrap_or("");
                s.parse::<f64>().map_err(|_| {
                    CliError::Input(format!(
                        "row {}: column {} is not a number: {s:?}",
                        i + 2,
                        self.headers[col]
                    ))
                })
            })
            .collect()
    }

    pub fn strings(&self, col: usize) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| r.get(col).unwrap_or("").to_string())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_text_round_trips() {
        for x in [0.0, 1.5, -2.0e-12, 6.25e-5, 1e300, 123456.789] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1.25e-9), "1.25e-9");
    }

    #[test]
    fn columns_by_name_or_position() {
        let c = Columns::parse(b"a, b\n1, 2\n3, 4\n").unwrap();
        assert_eq!(c.floats(c.index("b", 0).unwrap()).unwrap(), vec![2.0, 4.0]);
        assert_eq!(c.index("zzz", 0).unwrap(), 0);
        assert!(c.index("zzz", 5).is_err());
        assert!(Columns::parse(b"a\nx\n").unwrap().floats(0).is_err());
    }
}
