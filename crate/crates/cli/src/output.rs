//! Deterministic JSON and CSV writers. Every float goes out with 17
//! significant digits so that reports round-trip exactly.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use gapmode_core::analysis::AnalysisSettings;

use crate::Failure;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

pub fn opt_float(v: Option<f64>) -> String {
    v.map(float).unwrap_or_default()
}

/// Pretty printer that writes floats in scientific notation with a
/// 17-digit mantissa.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Io(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

/// JSON envelope shared by all report commands.
#[derive(Serialize)]
pub struct Report<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_hash: &'a str,
    settings: &'a AnalysisSettings,
    report: T,
}

impl<'a, T: Serialize> Report<'a, T> {
    pub fn new(command: &'static str, config_hash: &'a str, settings: &'a AnalysisSettings, report: T) -> Self {
        Self {
            tool: "gapmode",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config_hash,
            settings,
            report,
        }
    }

    pub fn write(&self, out: Option<&Path>) -> Result<(), Failure> {
        let mut w = sink(out)?;
        let mut ser = serde_json::Serializer::with_formatter(&mut w, ExactFloats(PrettyFormatter::new()));
        let io_err = |e: &dyn std::fmt::Display| Failure::Io(format!("write failed: {e}"));
        self.serialize(&mut ser).map_err(|e| io_err(&e))?;
        writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(&e))
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    pub fn write(&self, out: Option<&Path>) -> Result<(), Failure> {
        let io_err = |e: csv::Error| Failure::Io(format!("write failed: {e}"));
        let mut w = csv::Writer::from_writer(sink(out)?);
        w.write_record(&self.header).map_err(io_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(io_err)?;
        }
        w.flush().map_err(|e| Failure::Io(format!("write failed: {e}")))
    }
}
