//! S21 trace containers, Touchstone v1 / CSV readers and writers, and
//! measurement metadata sidecars.
//!
//! Amplitudes are always held as linear complex values; dB only appears
//! while reading or writing files.

use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::db_to_amplitude;

pub const MIN_TRACE_POINTS: usize = 8;

/// Frequency grid plus complex transmission samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexTrace {
    freq: Vec<f64>,
    s21: Vec<Complex64>,
}

impl ComplexTrace {
    pub fn new(freq: Vec<f64>, s21: Vec<Complex64>) -> Result<Self> {
        if freq.len() != s21.len() {
            return Err(Error::validation(
                "trace",
                format!("{} frequencies but {} samples", freq.len(), s21.len()),
            ));
        }
        if freq.len() < MIN_TRACE_POINTS {
            return Err(Error::validation(
                "trace",
                format!("{} points, need at least {MIN_TRACE_POINTS}", freq.len()),
            ));
        }
        if let Some(i) = freq.iter().position(|f| !f.is_finite()) {
            return Err(Error::validation(
                "freq",
                format!("non-finite value at index {i}"),
            ));
        }
        if let Some(i) = freq.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::validation(
                "freq",
                format!("not strictly ascending at index {}", i + 1),
            ));
        }
        if let Some(i) = s21
            .iter()
            .position(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::validation(
                "s21",
                format!("non-finite sample at index {i}"),
            ));
        }
        Ok(Self { freq, s21 })
    }

    pub fn freq(&self) -> &[f64] {
        &self.freq
    }

    pub fn s21(&self) -> &[Complex64] {
        &self.s21
    }

    pub fn len(&self) -> usize {
        self.freq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq.is_empty()
    }

    pub fn f_min(&self) -> f64 {
        self.freq[0]
    }

    pub fn f_max(&self) -> f64 {
        self.freq[self.freq.len() - 1]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.freq.iter().copied().zip(self.s21.iter().copied())
    }

    /// Index range `[lo, hi)` as a new trace.
    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        Self::new(self.freq[lo..hi].to_vec(), self.s21[lo..hi].to_vec())
    }

    /// Applies `f(freq, s21)` to every sample.
    pub fn map<F: Fn(f64, Complex64) -> Complex64>(&self, f: F) -> Result<Self> {
        let s21 = self.iter().map(|(fr, z)| f(fr, z)).collect();
        Self::new(self.freq.clone(), s21)
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.s21.iter().map(|z| 20.0 * z.norm().log10()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TraceRole {
    Cavity,
    Through,
    #[default]
    Resonator,
}

impl std::str::FromStr for TraceRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cavity" => Ok(TraceRole::Cavity),
            "through" | "thru" => Ok(TraceRole::Through),
            "resonator" => Ok(TraceRole::Resonator),
            other => Err(Error::validation("role", format!("unknown role {other:?}"))),
        }
    }
}

/// Measurement conditions attached to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    /// Instrument output power, dBm.
    pub vna_power_dbm: f64,
    /// Total input-line attenuation, dB.
    pub attenuation_db: f64,
    pub temperature_k: f64,
    pub label: String,
    pub role: TraceRole,
    /// Unaccounted cable/connector loss added to the attenuation, dB.
    #[serde(default)]
    pub extra_loss_db: f64,
}

impl TraceMeta {
    pub fn validate(&self) -> Result<()> {
        if !self.vna_power_dbm.is_finite() {
            return Err(Error::validation("vna_power_dbm", "must be finite"));
        }
        if !(self.attenuation_db >= 0.0) || !self.attenuation_db.is_finite() {
            return Err(Error::validation(
                "attenuation_db",
                format!("must be finite and >= 0, got {}", self.attenuation_db),
            ));
        }
        if !(self.temperature_k > 0.0) || !self.temperature_k.is_finite() {
            return Err(Error::validation(
                "temperature_k",
                format!("must be finite and > 0, got {}", self.temperature_k),
            ));
        }
        if !(self.extra_loss_db >= 0.0) || !self.extra_loss_db.is_finite() {
            return Err(Error::validation(
                "extra_loss_db",
                format!("must be finite and >= 0, got {}", self.extra_loss_db),
            ));
        }
        Ok(())
    }

    /// Attenuation between the instrument port and the chip, dB.
    pub fn total_loss_db(&self) -> f64 {
        self.attenuation_db + self.extra_loss_db
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasuredTrace {
    pub trace: ComplexTrace,
    pub meta: TraceMeta,
}

pub fn attach_metadata(trace: ComplexTrace, meta: TraceMeta) -> Result<MeasuredTrace> {
    meta.validate()?;
    let trace = ComplexTrace::new(trace.freq, trace.s21)?;
    Ok(MeasuredTrace { trace, meta })
}

// ---------------------------------------------------------------- Touchstone

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataFormat {
    Ri,
    Ma,
    Db,
}

pub fn read_touchstone(path: impl AsRef<Path>) -> Result<ComplexTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_touchstone(&text, &path.display().to_string())
}

/// Parses a two-port Touchstone v1 document and returns its S21 column.
pub fn parse_touchstone(text: &str, source: &str) -> Result<ComplexTrace> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };

    let mut unit = 1e9;
    let mut format = DataFormat::Ma;
    let mut seen_option = false;
    let mut freq = Vec::new();
    let mut s21 = Vec::new();
    let mut pending: Vec<f64> = Vec::with_capacity(9);
    let mut record_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('!').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            return Err(perr(
                lineno,
                format!("Touchstone v2 keyword {line:?}; only v1.x files are supported"),
            ));
        }
        if let Some(opts) = line.strip_prefix('#') {
            if seen_option {
                // v1: only the first option line counts.
                continue;
            }
            seen_option = true;
            let mut toks = opts.split_whitespace();
            while let Some(tok) = toks.next() {
                match tok.to_ascii_uppercase().as_str() {
                    "HZ" => unit = 1.0,
                    "KHZ" => unit = 1e3,
                    "MHZ" => unit = 1e6,
                    "GHZ" => unit = 1e9,
                    "S" => {}
                    "Y" | "Z" | "H" | "G" => {
                        return Err(perr(
                            lineno,
                            format!("unsupported parameter type {tok:?}; expected S"),
                        ))
                    }
                    "RI" => format = DataFormat::Ri,
                    "MA" => format = DataFormat::Ma,
                    "DB" => format = DataFormat::Db,
                    "R" => {
                        let r = toks
                            .next()
                            .ok_or_else(|| perr(lineno, "R without reference impedance".into()))?;
                        r.parse::<f64>()
                            .map_err(|_| perr(lineno, format!("bad reference impedance {r:?}")))?;
                    }
                    _ => return Err(perr(lineno, format!("unsupported option {tok:?}"))),
                }
            }
            continue;
        }

        let toks: Vec<&str> = line.split_whitespace().collect();
        if pending.is_empty() && toks.len() == 5 && !freq.is_empty() {
            // Two-port noise parameter block; S-parameter data has ended.
            break;
        }
        if pending.is_empty() {
            record_line = lineno;
        }
        for tok in toks {
            let v: f64 = tok
                .parse()
                .map_err(|_| perr(lineno, format!("unparseable number {tok:?}")))?;
            pending.push(v);
            if pending.len() == 9 {
                let f = pending[0] * unit;
                if let Some(&last) = freq.last() {
                    if f <= last {
                        return Err(perr(
                            record_line,
                            format!("non-monotonic frequency {f} Hz after {last} Hz"),
                        ));
                    }
                }
                let (a, b) = (pending[3], pending[4]);
                let z = match format {
                    DataFormat::Ri => Complex64::new(a, b),
                    DataFormat::Ma => Complex64::from_polar(a, b.to_radians()),
                    DataFormat::Db => Complex64::from_polar(db_to_amplitude(a), b.to_radians()),
                };
                freq.push(f);
                s21.push(z);
                pending.clear();
                record_line = lineno;
            }
        }
    }
    if !pending.is_empty() {
        return Err(perr(
            record_line,
            format!("truncated record: {} of 9 values", pending.len()),
        ));
    }
    if freq.is_empty() {
        return Err(perr(0, "no samples".into()));
    }
    ComplexTrace::new(freq, s21)
}

/// Writes a two-port Touchstone file in RI format (Hz) with S21 = S12 and
/// zero reflections.
pub fn write_touchstone(path: impl AsRef<Path>, trace: &ComplexTrace) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, touchstone_string(trace)).map_err(|e| Error::io(path, e))
}

pub fn touchstone_string(trace: &ComplexTrace) -> String {
    let mut out = String::new();
    out.push_str("! resokit synthetic trace\n# Hz S RI R 50\n");
    for (f, z) in trace.iter() {
        let _ = writeln!(
            out,
            "{f:e} 0 0 {:e} {:e} {:e} {:e} 0 0",
            z.re, z.im, z.re, z.im
        );
    }
    out
}

// ---------------------------------------------------------------- CSV

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    /// Real and imaginary parts.
    RealImag,
    /// Magnitude in dB and phase in degrees.
    DbDeg,
}

/// Column mapping for CSV traces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub kind: CsvKind,
    pub freq: String,
    pub first: String,
    pub second: String,
}

impl CsvSchema {
    pub fn real_imag() -> Self {
        Self {
            kind: CsvKind::RealImag,
            freq: "freq_hz".into(),
            first: "re".into(),
            second: "im".into(),
        }
    }

    pub fn db_deg() -> Self {
        Self {
            kind: CsvKind::DbDeg,
            freq: "freq_hz".into(),
            first: "mag_db".into(),
            second: "phase_deg".into(),
        }
    }

    /// Picks the standard schema matching a header row, if any.
    pub fn detect(headers: &[&str]) -> Option<Self> {
        let has = |n: &str| headers.iter().any(|h| h.trim() == n);
        if has("freq_hz") && has("re") && has("im") {
            Some(Self::real_imag())
        } else if has("freq_hz") && has("mag_db") && has("phase_deg") {
            Some(Self::db_deg())
        } else {
            None
        }
    }
}

pub fn read_csv_trace(path: impl AsRef<Path>, schema: Option<&CsvSchema>) -> Result<ComplexTrace> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv_trace(file, schema, &path.display().to_string())
}

/// Parses a CSV trace; with `schema = None` the header decides.
pub fn parse_csv_trace<R: Read>(
    reader: R,
    schema: Option<&CsvSchema>,
    source: &str,
) -> Result<ComplexTrace> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let header_names: Vec<&str> = headers.iter().collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => CsvSchema::detect(&header_names).ok_or_else(|| {
            perr(
                1,
                format!("cannot infer schema from header {header_names:?}"),
            )
        })?,
    };
    let col = |name: &str| {
        header_names
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| perr(1, format!("missing column {name:?}")))
    };
    let (ci_f, ci_a, ci_b) = (
        col(&schema.freq)?,
        col(&schema.first)?,
        col(&schema.second)?,
    );

    let mut freq = Vec::new();
    let mut s21 = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let cell = |c: usize| -> Result<f64> {
            let s = rec
                .get(c)
                .ok_or_else(|| perr(line, format!("row has no column {c}")))?;
            s.parse::<f64>()
                .map_err(|_| perr(line, format!("unparseable cell {s:?}")))
        };
        let (f, a, b) = (cell(ci_f)?, cell(ci_a)?, cell(ci_b)?);
        if let Some(&last) = freq.last() {
            if f <= last {
                return Err(perr(
                    line,
                    format!("non-monotonic frequency {f} after {last}"),
                ));
            }
        }
        freq.push(f);
        s21.push(match schema.kind {
            CsvKind::RealImag => Complex64::new(a, b),
            CsvKind::DbDeg => Complex64::from_polar(db_to_amplitude(a), b.to_radians()),
        });
    }
    if freq.is_empty() {
        return Err(perr(2, "no samples".into()));
    }
    ComplexTrace::new(freq, s21)
}

pub fn write_csv_trace(path: impl AsRef<Path>, trace: &ComplexTrace) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, csv_string(trace)).map_err(|e| Error::io(path, e))
}

/// Real/imaginary CSV with shortest round-trip float formatting.
pub fn csv_string(trace: &ComplexTrace) -> String {
    let mut out = String::from("freq_hz,re,im\n");
    for (f, z) in trace.iter() {
        let _ = writeln!(out, "{f:?},{:?},{:?}", z.re, z.im);
    }
    out
}

/// Reads a trace, choosing the format from the extension (`.sNp` / `.ts` vs `.csv`).
pub fn read_trace(path: impl AsRef<Path>) -> Result<ComplexTrace> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "csv" {
        read_csv_trace(path, None)
    } else {
        read_touchstone(path)
    }
}

pub fn write_trace(path: impl AsRef<Path>, trace: &ComplexTrace) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => write_csv_trace(path, trace),
        _ => write_touchstone(path, trace),
    }
}

// ---------------------------------------------------------------- metadata

/// Metadata with every field optional; both sidecars and CLI flags parse into this.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialMeta {
    pub vna_power_dbm: Option<f64>,
    pub attenuation_db: Option<f64>,
    pub temperature_k: Option<f64>,
    pub label: Option<String>,
    pub role: Option<TraceRole>,
    pub extra_loss_db: Option<f64>,
}

impl From<TraceMeta> for PartialMeta {
    fn from(m: TraceMeta) -> Self {
        Self {
            vna_power_dbm: Some(m.vna_power_dbm),
            attenuation_db: Some(m.attenuation_db),
            temperature_k: Some(m.temperature_k),
            label: Some(m.label),
            role: Some(m.role),
            extra_loss_db: Some(m.extra_loss_db),
        }
    }
}

pub const DEFAULT_TEMPERATURE_K: f64 = 0.015;

/// `foo.s2p` -> `foo.meta.json`.
pub fn sidecar_path(trace_path: impl AsRef<Path>) -> PathBuf {
    let p = trace_path.as_ref();
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    p.with_file_name(format!("{stem}.meta.json"))
}

pub fn read_sidecar(path: impl AsRef<Path>) -> Result<PartialMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_sidecar(path: impl AsRef<Path>, meta: &TraceMeta) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Merges sidecar and inline metadata. Inline values win unless
/// `sidecar_wins` is set. Missing temperature falls back to 15 mK.
pub fn resolve_metadata(
    sidecar: Option<&PartialMeta>,
    inline: &PartialMeta,
    sidecar_wins: bool,
) -> Result<TraceMeta> {
    let empty = PartialMeta::default();
    let side = sidecar.unwrap_or(&empty);
    let (hi, lo) = if sidecar_wins {
        (side, inline)
    } else {
        (inline, side)
    };
    macro_rules! pick {
        ($f:ident) => {
            hi.$f.clone().or_else(|| lo.$f.clone())
        };
    }
    let vna_power_dbm = pick!(vna_power_dbm)
        .ok_or_else(|| Error::validation("vna_power_dbm", "missing from sidecar and flags"))?;
    let attenuation_db = pick!(attenuation_db)
        .ok_or_else(|| Error::validation("attenuation_db", "missing from sidecar and flags"))?;
    let temperature_k = pick!(temperature_k).unwrap_or_else(|| {
        log::warn!("no temperature given, assuming {DEFAULT_TEMPERATURE_K} K");
        DEFAULT_TEMPERATURE_K
    });
    let meta = TraceMeta {
        vna_power_dbm,
        attenuation_db,
        temperature_k,
        label: pick!(label).unwrap_or_default(),
        role: pick!(role).unwrap_or_default(),
        extra_loss_db: pick!(extra_loss_db).unwrap_or(0.0),
    };
    meta.validate()?;
    Ok(meta)
}
