//! Output framing. CSV files start with `#` comment lines; JSON documents
//! wrap the result in `{"meta": …, "result": …}`. Neither carries anything
//! time-dependent, so identical runs give identical bytes.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;

pub const TOOL: &str = "sdcrisk";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Meta {
    pub command: &'static str,
    pub params: Value,
    pub seed: Option<u64>,
}

impl Meta {
    pub fn new<P: Serialize>(
        command: &'static str,
        params: &P,
        seed: Option<u64>,
    ) -> Result<Self, CliError> {
        Ok(Self {
            command,
            params: serde_json::to_value(params)?,
            seed,
        })
    }

    pub fn csv_header(&self) -> String {
        let mut h = format!(
            "# {TOOL} {VERSION}\n# command: {}\n# params: {}\n",
            self.command, self.params
        );
        if let Some(seed) = self.seed {
            h.push_str(&format!("# seed: {seed}\n"));
        }
        h
    }

    pub fn json(&self) -> Value {
        let mut meta = json!({
            "tool": TOOL,
            "version": VERSION,
            "command": self.command,
            "params": self.params,
        });
        if let Some(seed) = self.seed {
            meta["seed"] = json!(seed);
        }
        meta
    }
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => File::create(path)?.write_all(bytes)?,
        None => io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}

/// Writes the comment header followed by the body produced by `body`.
pub fn write_csv<F>(meta: &Meta, out: Option<&Path>, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
{
    let mut buf = meta.csv_header().into_bytes();
    body(&mut buf)?;
    emit(&buf, out)
}

pub fn write_json<R: Serialize>(
    meta: &Meta,
    out: Option<&Path>,
    result: &R,
) -> Result<(), CliError> {
    let doc = json!({ "meta": meta.json(), "result": serde_json::to_value(result)? });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    emit(text.as_bytes(), out)
}

/// Uses the given seed or draws one and announces it on stderr.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("{TOOL}: no --seed given, using seed {s}");
        s
    })
}
