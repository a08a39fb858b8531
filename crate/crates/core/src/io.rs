//! Plain-file artifacts.
//!
//! Binary dumps are one JSON header line followed by little-endian `f64`
//! samples in row-major order. Complex samples are interleaved `(re, im)`.
//! Header kinds are `"complex"`, `"real"` and `"moment_lattice"`.
//!
//! An intensity stack is a directory holding `manifest.json` and one real
//! dump per (realization, shift). Covariance maps go to CSV, and `#` lines
//! at the top carry provenance. Heatmaps are binary grayscale PGM.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{CovarianceMap, IntensityStack, OffsetSample};
use crate::grid::{ComplexField, Point, RealField, TransverseGrid};
use crate::moment_ode::MomentLattice;

/// Provenance stamped on every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub version: String,
}

impl Provenance {
    pub fn new(scenario_hash: impl Into<String>) -> Self {
        Self {
            scenario_hash: scenario_hash.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldHeader {
    kind: String,
    dim: usize,
    n: usize,
    dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LatticeHeader {
    kind: String,
    axes: [String; 4],
    m: usize,
    dkappa: f64,
    z: f64,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn format_err(p: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path_str(p),
        detail: detail.to_string(),
    }
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    File::create(p).map(BufWriter::new).map_err(|e| Error::io(path_str(p), e))
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p).map(BufReader::new).map_err(|e| Error::io(path_str(p), e))
}

fn write_header<W: Write, H: Serialize>(w: &mut W, header: &H) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, header)?;
    w.write_all(b"\n")
}

fn write_f64s<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_header<R: BufRead, H: for<'de> Deserialize<'de>>(r: &mut R, p: &Path) -> Result<H> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path_str(p), e))?;
    serde_json::from_str(line.trim_end()).map_err(|e| format_err(p, format!("bad header: {e}")))
}

fn read_f64s<R: Read>(r: &mut R, count: usize, p: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path_str(p), e))?;
    if bytes.len() != 8 * count {
        return Err(format_err(p, format!("expected {} samples, found {} bytes", count, bytes.len())));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn header_grid(h: &FieldHeader, p: &Path) -> Result<TransverseGrid> {
    TransverseGrid::new(h.dim, h.n, h.dx).map_err(|e| format_err(p, e))
}

/// A field read back from a dump.
#[derive(Debug, Clone, PartialEq)]
pub enum Dump {
    Complex(ComplexField),
    Real(RealField),
}

pub fn write_complex_field(path: &Path, f: &ComplexField) -> Result<()> {
    let g = f.grid;
    let mut w = create(path)?;
    let header = FieldHeader {
        kind: "complex".into(),
        dim: g.dim(),
        n: g.n(),
        dx: g.dx(),
    };
    write_header(&mut w, &header)
        .and_then(|_| write_f64s(&mut w, f.values.iter().flat_map(|v| [v.re, v.im])))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path_str(path), e))
}

pub fn write_real_field(path: &Path, f: &RealField) -> Result<()> {
    let g = f.grid;
    let mut w = create(path)?;
    let header = FieldHeader {
        kind: "real".into(),
        dim: g.dim(),
        n: g.n(),
        dx: g.dx(),
    };
    write_header(&mut w, &header)
        .and_then(|_| write_f64s(&mut w, f.values.iter().copied()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path_str(path), e))
}

pub fn read_field(path: &Path) -> Result<Dump> {
    let mut r = open(path)?;
    let h: FieldHeader = read_header(&mut r, path)?;
    let g = header_grid(&h, path)?;
    match h.kind.as_str() {
        "complex" => {
            let raw = read_f64s(&mut r, 2 * g.len(), path)?;
            let values = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
            Ok(Dump::Complex(ComplexField::new(g, values)?))
        }
        "real" => Ok(Dump::Real(RealField::new(g, read_f64s(&mut r, g.len(), path)?)?)),
        other => Err(format_err(path, format!("unknown field kind '{other}'"))),
    }
}

pub fn read_real_field(path: &Path) -> Result<RealField> {
    match read_field(path)? {
        Dump::Real(f) => Ok(f),
        Dump::Complex(_) => Err(format_err(path, "expected a real field")),
    }
}

pub fn read_complex_field(path: &Path) -> Result<ComplexField> {
    match read_field(path)? {
        Dump::Complex(f) => Ok(f),
        Dump::Real(f) => Ok(f.to_complex()),
    }
}

/// Lattice snapshot with a four-axis header.
pub fn write_lattice(path: &Path, lat: &MomentLattice) -> Result<()> {
    let mut w = create(path)?;
    let header = LatticeHeader {
        kind: "moment_lattice".into(),
        axes: ["xi1", "xi2", "zeta1", "zeta2"].map(String::from),
        m: lat.m,
        dkappa: lat.dkappa,
        z: lat.z,
    };
    write_header(&mut w, &header)
        .and_then(|_| write_f64s(&mut w, lat.values.iter().flat_map(|v| [v.re, v.im])))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path_str(path), e))
}

pub fn read_lattice(path: &Path) -> Result<MomentLattice> {
    let mut r = open(path)?;
    let h: LatticeHeader = read_header(&mut r, path)?;
    if h.kind != "moment_lattice" {
        return Err(format_err(path, format!("expected a moment lattice, found '{}'", h.kind)));
    }
    let count = h.m.checked_pow(4).ok_or_else(|| format_err(path, "lattice size overflows"))?;
    let raw = read_f64s(&mut r, 2 * count, path)?;
    Ok(MomentLattice {
        m: h.m,
        dkappa: h.dkappa,
        z: h.z,
        values: raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
    })
}

/// Contents of `manifest.json` in a stack directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub dim: usize,
    pub n: usize,
    pub dx: f64,
    pub seed: u64,
    pub tag: String,
    pub shifts: Vec<Point>,
    pub realizations: usize,
    /// `files[realization][shift]`, relative to the stack directory.
    pub intensity_files: Vec<Vec<String>>,
    pub field_files: Option<Vec<Vec<String>>>,
}

pub const MANIFEST: &str = "manifest.json";

/// Write a stack into `dir` (created if needed).
pub fn write_stack(dir: &Path, stack: &IntensityStack, provenance: &Provenance) -> Result<StackManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(path_str(dir), e))?;
    let g = stack.grid;
    let mut intensity_files = Vec::with_capacity(stack.realizations());
    for (r, row) in stack.intensities.iter().enumerate() {
        let mut names = Vec::with_capacity(row.len());
        for (s, f) in row.iter().enumerate() {
            let name = format!("intensity_r{r:05}_s{s:04}.bin");
            write_real_field(&dir.join(&name), f)?;
            names.push(name);
        }
        intensity_files.push(names);
    }
    let field_files = match &stack.fields {
        None => None,
        Some(fields) => {
            let mut all = Vec::with_capacity(fields.len());
            for (r, row) in fields.iter().enumerate() {
                let mut names = Vec::with_capacity(row.len());
                for (s, f) in row.iter().enumerate() {
                    let name = format!("field_r{r:05}_s{s:04}.bin");
                    write_complex_field(&dir.join(&name), f)?;
                    names.push(name);
                }
                all.push(names);
            }
            Some(all)
        }
    };
    let manifest = StackManifest {
        provenance: provenance.clone(),
        dim: g.dim(),
        n: g.n(),
        dx: g.dx(),
        seed: stack.seed,
        tag: stack.tag.clone(),
        shifts: stack.shifts.clone(),
        realizations: stack.realizations(),
        intensity_files,
        field_files,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<StackManifest> {
    read_json(&dir.join(MANIFEST))
}

/// Load a stack. When `expected_hash` is given, a manifest carrying a
/// different scenario hash is rejected.
pub fn read_stack(dir: &Path, expected_hash: Option<&str>) -> Result<(IntensityStack, StackManifest)> {
    let manifest = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST);
    if let Some(h) = expected_hash {
        if h != manifest.provenance.scenario_hash {
            return Err(Error::Precondition(format!(
                "stack {} was produced by scenario {} but {} was supplied",
                path_str(dir),
                manifest.provenance.scenario_hash,
                h
            )));
        }
    }
    let g = TransverseGrid::new(manifest.dim, manifest.n, manifest.dx).map_err(|e| format_err(&mpath, e))?;
    if manifest.intensity_files.len() != manifest.realizations {
        return Err(format_err(&mpath, "realization count does not match the file table"));
    }
    let load_real = |name: &String| -> Result<RealField> {
        let f = read_real_field(&dir.join(name))?;
        g.ensure_same(&f.grid)?;
        Ok(f)
    };
    let intensities = manifest
        .intensity_files
        .iter()
        .map(|row| row.iter().map(load_real).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut stack = IntensityStack::from_intensities(g, manifest.shifts.clone(), intensities)?;
    if let Some(ff) = &manifest.field_files {
        let fields = ff
            .iter()
            .map(|row| {
                row.iter()
                    .map(|name| {
                        let f = read_complex_field(&dir.join(name))?;
                        g.ensure_same(&f.grid)?;
                        Ok(f)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        stack.fields = Some(fields);
    }
    stack.seed = manifest.seed;
    stack.tag = manifest.tag.clone();
    Ok((stack, manifest))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(std::io::Error::other)
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path_str(path), e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = open(path)?;
    serde_json::from_reader(r).map_err(|e| format_err(path, e))
}

fn write_comments<W: Write>(w: &mut W, provenance: &Provenance) -> std::io::Result<()> {
    writeln!(w, "# scenario_hash={}", provenance.scenario_hash)?;
    writeln!(w, "# version={}", provenance.version)
}

/// Pair-level CSV: one row per `(i, j)` with both shifts and the offset.
pub fn write_covariance_pairs_csv(path: &Path, map: &CovarianceMap, provenance: &Provenance) -> Result<()> {
    let mut w = create(path)?;
    write_comments(&mut w, provenance).map_err(|e| Error::io(path_str(path), e))?;
    let mut csv = csv::Writer::from_writer(w);
    let wrap = |e: csv::Error| format_err(path, e);
    csv.write_record(["i", "j", "ri_x", "ri_y", "rj_x", "rj_y", "dr_x", "dr_y", "value", "stderr"])
        .map_err(wrap)?;
    let s = map.size();
    for i in 0..s {
        for j in 0..s {
            let (ri, rj) = (map.shifts[i], map.shifts[j]);
            let se = map.stderr.as_ref().map(|e| e[i * s + j].to_string()).unwrap_or_default();
            csv.write_record([
                i.to_string(),
                j.to_string(),
                ri[0].to_string(),
                ri[1].to_string(),
                rj[0].to_string(),
                rj[1].to_string(),
                (rj[0] - ri[0]).to_string(),
                (rj[1] - ri[1]).to_string(),
                map.get(i, j).to_string(),
                se,
            ])
            .map_err(wrap)?;
        }
    }
    csv.flush().map_err(|e| Error::io(path_str(path), e))
}

#[derive(Debug, Serialize, Deserialize)]
struct OffsetRow {
    dr_x: f64,
    dr_y: f64,
    value: f64,
    stderr: Option<f64>,
    pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    analytic: Option<f64>,
}

/// Offset-level CSV: `dr_x, dr_y, value, stderr, pairs`.
pub fn write_offsets_csv(path: &Path, samples: &[OffsetSample], provenance: &Provenance) -> Result<()> {
    write_offsets_csv_with_analytic(path, samples, None, provenance)
}

/// Offset CSV with an extra `analytic` column holding a prediction per row.
/// [`read_offsets_csv`] ignores the column.
pub fn write_offsets_csv_with_analytic(
    path: &Path,
    samples: &[OffsetSample],
    analytic: Option<&[f64]>,
    provenance: &Provenance,
) -> Result<()> {
    if let Some(a) = analytic {
        if a.len() != samples.len() {
            return Err(Error::GridMismatch(format!("{} predictions for {} offsets", a.len(), samples.len())));
        }
    }
    let mut w = create(path)?;
    write_comments(&mut w, provenance).map_err(|e| Error::io(path_str(path), e))?;
    let mut csv = csv::Writer::from_writer(w);
    for (i, s) in samples.iter().enumerate() {
        csv.serialize(OffsetRow {
            dr_x: s.offset[0],
            dr_y: s.offset[1],
            value: s.value,
            stderr: s.stderr,
            pairs: s.pairs,
            analytic: analytic.map(|a| a[i]),
        })
        .map_err(|e| format_err(path, e))?;
    }
    csv.flush().map_err(|e| Error::io(path_str(path), e))
}

/// Read an offset CSV. Rows must be finite; comment lines are skipped.
pub fn read_offsets_csv(path: &Path) -> Result<Vec<OffsetSample>> {
    let r = open(path)?;
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for (line, row) in csv.deserialize::<OffsetRow>().enumerate() {
        let row = row.map_err(|e| format_err(path, e))?;
        if !(row.dr_x.is_finite() && row.dr_y.is_finite() && row.value.is_finite()) {
            return Err(format_err(path, format!("non-finite entry in data row {}", line + 1)));
        }
        out.push(OffsetSample {
            offset: [row.dr_x, row.dr_y],
            value: row.value,
            stderr: row.stderr,
            pairs: row.pairs,
        });
    }
    if out.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    Ok(out)
}

/// Provenance lines of a CSV written by this module, if present.
pub fn read_csv_provenance(path: &Path) -> Result<Option<Provenance>> {
    let r = open(path)?;
    let (mut hash, mut version) = (None, None);
    for line in r.lines() {
        let line = line.map_err(|e| Error::io(path_str(path), e))?;
        let Some(rest) = line.strip_prefix("# ") else { break };
        if let Some(v) = rest.strip_prefix("scenario_hash=") {
            hash = Some(v.to_string());
        } else if let Some(v) = rest.strip_prefix("version=") {
            version = Some(v.to_string());
        }
    }
    Ok(hash.zip(version).map(|(scenario_hash, version)| Provenance { scenario_hash, version }))
}

/// Binary PGM heatmap of a row-major `width × height` array, scaled
/// linearly from its minimum (black) to its maximum (white).
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], provenance: &Provenance) -> Result<()> {
    if values.len() != width * height || width == 0 {
        return Err(Error::GridMismatch(format!(
            "{} values for a {width}x{height} heatmap",
            values.len()
        )));
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut w = create(path)?;
    let body: Vec<u8> = values
        .iter()
        .map(|v| (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write!(
        w,
        "P5\n# scenario_hash={} version={}\n{width} {height}\n255\n",
        provenance.scenario_hash, provenance.version
    )
    .and_then(|_| w.write_all(&body))
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path_str(path), e))
}

/// Heatmap of a 2-D real field.
pub fn write_field_pgm(path: &Path, f: &RealField, provenance: &Provenance) -> Result<()> {
    let n = f.grid.n();
    let h = if f.grid.dim() == 2 { n } else { 1 };
    write_pgm(path, n, h, &f.values, provenance)
}
