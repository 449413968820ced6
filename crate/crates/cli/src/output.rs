//! Result emission: JSON objects for scalar results, CSV tables for
//! everything tabular. Both carry the configuration echo and its hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Model;

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'a str,
    result: T,
    seed: u64,
    config_sha256: String,
    config: serde_json::Value,
}

pub enum Output {
    Json(String),
    Csv(String),
}

impl Output {
    pub fn json<T: Serialize>(command: &str, model: &Model, result: T) -> Self {
        let (echo, hash) = model.echo();
        let report = Report {
            command,
            result,
            seed: model.raw.seed,
            config_sha256: hash,
            config: serde_json::from_str(&echo).expect("echo is valid JSON"),
        };
        let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
        text.push('\n');
        Output::Json(text)
    }

    /// A CSV table followed by a comment block with the configuration.
    pub fn csv(command: &str, model: &Model, header: &[&str], rows: &[Vec<String>]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        for row in rows {
            writer.write_record(row).expect("in-memory write");
        }
        let mut text =
            String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("CSV is UTF-8");
        let (echo, hash) = model.echo();
        text.push_str(&format!("# command: {command}\n"));
        text.push_str(&format!("# seed: {}\n", model.raw.seed));
        text.push_str(&format!("# config_sha256: {hash}\n"));
        text.push_str(&format!("# config: {echo}\n"));
        Output::Csv(text)
    }

    fn parts(&self) -> (&str, &str) {
        match self {
            Output::Json(t) => ("json", t),
            Output::Csv(t) => ("csv", t),
        }
    }

    /// Writes `<out_dir>/<command>.<ext>`, or to stdout without a directory.
    pub fn emit(&self, command: &str, out_dir: Option<&Path>) -> std::io::Result<Option<PathBuf>> {
        let (ext, text) = self.parts();
        match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let path = dir.join(format!("{command}.{ext}"));
                fs::write(&path, text)?;
                Ok(Some(path))
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes())?;
                Ok(None)
            }
        }
    }
}

/// Shortest round-trip text for a float; empty for a missing value.
pub fn num(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:?}"),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -1.5, 1e-17, 0.1 + 0.2, 123456789.125] {
            assert_eq!(num(Some(x)).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(None), "");
    }
}
