//! Binary file formats (`IFC1` cubes, `RAH1` heatmaps, `MMW1` weights, `MPDB`
//! databases) and the small CSV tables exchanged between pipeline stages.
//!
//! All binary payloads are little-endian.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex32;
use sha2::{Digest, Sha256};

use crate::concat::PoseOffset;
use crate::encoder::{Descriptor, EncoderArch, EncoderWeights, EpochLog, InputScaling, LayerParams};
use crate::error::{Error, Result};
use crate::heatmap::Heatmap;
use crate::placedb::{PlaceDb, PlaceRecord};
use crate::radar::IfCube;

pub const IFC_MAGIC: &[u8; 4] = b"IFC1";
pub const RAH_MAGIC: &[u8; 4] = b"RAH1";
pub const MMW_MAGIC: &[u8; 4] = b"MMW1";
pub const MPDB_MAGIC: &[u8; 4] = b"MPDB";

/// Refuses headers that would ask for more than this many elements.
const MAX_ELEMENTS: u64 = 1 << 31;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let n = self.u32()?;
        Ok(n as usize).and_then(|n| {
            if n as u64 > MAX_ELEMENTS {
                Err(Error::Format(format!("{what} {n} too large")))
            } else {
                Ok(n)
            }
        })
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn check_product(dims: &[usize]) -> Result<usize> {
    let n = dims
        .iter()
        .try_fold(1u64, |acc, d| acc.checked_mul(*d as u64))
        .filter(|n| *n <= MAX_ELEMENTS)
        .ok_or_else(|| Error::Format(format!("dimensions {dims:?} too large")))?;
    Ok(n as usize)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// IFC1

pub fn encode_cube(cube: &IfCube) -> Result<Vec<u8>> {
    let (ns, nc, nr) = cube.dims();
    let mut out = Vec::with_capacity(16 + cube.data().len() * 8);
    out.extend_from_slice(IFC_MAGIC);
    for d in [ns, nc, nr] {
        put_u32(&mut out, d)?;
    }
    for z in cube.data() {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_cube(bytes: &[u8]) -> Result<IfCube> {
    let mut r = Reader::new(bytes);
    r.magic(IFC_MAGIC)?;
    let (ns, nc, nr) = (r.count("N_S")?, r.count("N_C")?, r.count("N_R")?);
    let n = check_product(&[ns, nc, nr, 2])?;
    let raw = r.f32s(n)?;
    r.finish()?;
    let data = raw.chunks_exact(2).map(|p| Complex32::new(p[0], p[1])).collect();
    IfCube::from_data((ns, nc, nr), data)
}

pub fn save_cube(path: impl AsRef<Path>, cube: &IfCube) -> Result<()> {
    write_all(path.as_ref(), &encode_cube(cube)?)
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<IfCube> {
    decode_cube(&read_all(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// RAH1

pub fn encode_heatmap(h: &Heatmap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + h.cols() * 8 + h.values().len() * 4);
    out.extend_from_slice(RAH_MAGIC);
    put_u32(&mut out, h.rows())?;
    put_u32(&mut out, h.cols())?;
    out.extend_from_slice(&h.range_bin_m().to_le_bytes());
    for a in h.angle_axis() {
        out.extend_from_slice(&a.to_le_bytes());
    }
    for v in h.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    let mut r = Reader::new(bytes);
    r.magic(RAH_MAGIC)?;
    let (rows, cols) = (r.count("rows")?, r.count("cols")?);
    let n = check_product(&[rows, cols])?;
    let range_bin = r.f64()?;
    let axis = (0..cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let values = r.f32s(n)?;
    r.finish()?;
    Heatmap::new(rows, cols, values, range_bin, axis)
}

pub fn save_heatmap(path: impl AsRef<Path>, h: &Heatmap) -> Result<()> {
    write_all(path.as_ref(), &encode_heatmap(h)?)
}

pub fn load_heatmap(path: impl AsRef<Path>) -> Result<Heatmap> {
    decode_heatmap(&read_all(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// MMW1
//
// magic, u32 layer count L, u32 input rows, u32 input cols, u32 input
// scaling code, (L + 1) x u32 channels, L x (u32, u32) pools, u64 init seed,
// then per layer the f32 kernel [cout][cin][3][3] followed by the f32 bias,
// then a 32-byte SHA-256 of everything before it.

/// Serialises weights. Parameters are stored as `f32`; weights returned by
/// training are already rounded, so they round-trip exactly.
pub fn encode_weights(w: &EncoderWeights) -> Result<Vec<u8>> {
    let arch = &w.arch;
    let mut out = Vec::new();
    out.extend_from_slice(MMW_MAGIC);
    put_u32(&mut out, arch.n_layers())?;
    put_u32(&mut out, arch.input_rows)?;
    put_u32(&mut out, arch.input_cols)?;
    out.extend_from_slice(&arch.input_scaling.code().to_le_bytes());
    for c in &arch.channels {
        put_u32(&mut out, *c)?;
    }
    for (kh, kw) in &arch.pools {
        put_u32(&mut out, *kh)?;
        put_u32(&mut out, *kw)?;
    }
    out.extend_from_slice(&w.seed.to_le_bytes());
    for p in w.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_weights(bytes: &[u8]) -> Result<EncoderWeights> {
    if bytes.len() < 36 {
        return Err(Error::Format("weights file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != trailer {
        return Err(Error::Format("weights checksum mismatch".into()));
    }
    let mut r = Reader::new(body);
    r.magic(MMW_MAGIC)?;
    let n_layers = r.count("layer count")?;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }
    let input_rows = r.count("input rows")?;
    let input_cols = r.count("input cols")?;
    let input_scaling = InputScaling::from_code(r.u32()?)?;
    let channels = (0..=n_layers).map(|_| r.count("channels")).collect::<Result<Vec<_>>>()?;
    let pools = (0..n_layers)
        .map(|_| Ok((r.count("pool")?, r.count("pool")?)))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64()?;
    let arch = EncoderArch {
        input_rows,
        input_cols,
        channels,
        pools,
        input_scaling,
    };
    arch.validate().map_err(|e| Error::Format(format!("bad architecture block: {e}")))?;
    let mut layers = Vec::with_capacity(n_layers);
    for c in arch.channels.windows(2) {
        let (cin, cout) = (c[0], c[1]);
        let kernel = r.f32s(check_product(&[cout, cin, 9])?)?;
        let bias = r.f32s(cout)?;
        layers.push(LayerParams {
            cin,
            cout,
            kernel: kernel.into_iter().map(f64::from).collect(),
            bias: bias.into_iter().map(f64::from).collect(),
        });
    }
    r.finish()?;
    let w = EncoderWeights { arch, layers, seed };
    if !w.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(w)
}

pub fn save_weights(path: impl AsRef<Path>, w: &EncoderWeights) -> Result<()> {
    write_all(path.as_ref(), &encode_weights(w)?)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<EncoderWeights> {
    decode_weights(&read_all(path.as_ref())?)
}

/// Hex SHA-256 of the serialised weights.
pub fn weights_checksum(w: &EncoderWeights) -> Result<String> {
    let digest = Sha256::digest(encode_weights(w)?);
    Ok(digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

// ---------------------------------------------------------------------------
// MPDB

pub fn encode_db(db: &PlaceDb) -> Result<Vec<u8>> {
    let dim = db.dim().unwrap_or(0);
    let mut out = Vec::with_capacity(12 + db.len() * (32 + dim * 4));
    out.extend_from_slice(MPDB_MAGIC);
    put_u32(&mut out, db.len())?;
    put_u32(&mut out, dim)?;
    for r in db.records() {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.extend_from_slice(&r.position[0].to_le_bytes());
        out.extend_from_slice(&r.position[1].to_le_bytes());
        out.extend_from_slice(&r.heading_deg.unwrap_or(f64::NAN).to_le_bytes());
        for v in &r.descriptor.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_db(bytes: &[u8]) -> Result<PlaceDb> {
    let mut r = Reader::new(bytes);
    r.magic(MPDB_MAGIC)?;
    let (n, dim) = (r.count("record count")?, r.count("descriptor dim")?);
    check_product(&[n, dim])?;
    let mut db = PlaceDb::new();
    for _ in 0..n {
        let id = r.u64()?;
        let position = [r.f64()?, r.f64()?];
        let heading = r.f64()?;
        let values = r.f32s(dim)?;
        let mut rec = PlaceRecord::new(id, Descriptor::new(values), position);
        rec.heading_deg = (!heading.is_nan()).then_some(heading);
        db.add(rec).map_err(|e| Error::Format(format!("bad record {id}: {e}")))?;
    }
    r.finish()?;
    Ok(db)
}

pub fn save_db(path: impl AsRef<Path>, db: &PlaceDb) -> Result<()> {
    write_all(path.as_ref(), &encode_db(db)?)
}

pub fn load_db(path: impl AsRef<Path>) -> Result<PlaceDb> {
    decode_db(&read_all(path.as_ref())?)
}

// ---------------------------------------------------------------------------
// CSV tables

/// One row of a pose table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub frame_idx: usize,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_deg: Option<f64>,
}

/// Per-frame simulator ground truth: platform heading and the predicted
/// heatmap cells `(row, col)` of every visible scatterer.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub frame_idx: usize,
    pub heading_deg: f64,
    pub cells: Vec<(usize, usize)>,
}

pub const OFFSETS_HEADER: &str = "frame_idx,r_offset,a_offset,score";
pub const TRAIN_LOG_HEADER: &str = "epoch,mean_loss,lr,val_recall1";
pub const POSES_HEADER: &str = "frame_idx,x_m,y_m,heading_deg";
pub const TRUTH_HEADER: &str = "frame_idx,heading_deg,n_visible,cells";

pub fn offsets_csv(offsets: &[PoseOffset]) -> String {
    let mut s = format!("{OFFSETS_HEADER}\n");
    for (i, o) in offsets.iter().enumerate() {
        let _ = writeln!(s, "{i},{},{},{}", o.r_offset, o.a_offset, o.score);
    }
    s
}

pub fn train_log_csv(history: &[EpochLog]) -> String {
    let mut s = format!("{TRAIN_LOG_HEADER}\n");
    for e in history {
        let val = e.val_recall1.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.mean_loss, e.lr, val);
    }
    s
}

pub fn poses_csv(poses: &[Pose]) -> String {
    let mut s = format!("{POSES_HEADER}\n");
    for p in poses {
        let h = p.heading_deg.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{}", p.frame_idx, p.x_m, p.y_m, h);
    }
    s
}

pub fn truth_csv(rows: &[TruthRow]) -> String {
    let mut s = format!("{TRUTH_HEADER}\n");
    for t in rows {
        let cells: Vec<String> = t.cells.iter().map(|(r, c)| format!("{r}:{c}")).collect();
        let _ = writeln!(s, "{},{},{},{}", t.frame_idx, t.heading_deg, t.cells.len(), cells.join(";"));
    }
    s
}

/// Data lines of a CSV table, checked against the expected header. Blank
/// lines are skipped; yields `(line_number, fields)`.
fn csv_rows<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((i, h)) => {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected header `{header}`, found `{}`", h.trim()),
            })
        }
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    let n_fields = header.split(',').count();
    lines
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != n_fields {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected {n_fields} fields, found {}", f.len()),
                });
            }
            Ok((i + 1, f))
        })
        .collect()
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad {name} `{s}`"),
    })
}

fn opt_field(line: usize, name: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        Ok(None)
    } else {
        field(line, name, s).map(Some)
    }
}

pub fn parse_offsets_csv(text: &str) -> Result<Vec<PoseOffset>> {
    let rows = csv_rows(text, OFFSETS_HEADER)?;
    rows.iter()
        .enumerate()
        .map(|(expect, (line, f))| {
            let idx: usize = field(*line, "frame_idx", f[0])?;
            if idx != expect {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("frame_idx {idx} out of sequence, expected {expect}"),
                });
            }
            Ok(PoseOffset {
                r_offset: field(*line, "r_offset", f[1])?,
                a_offset: field(*line, "a_offset", f[2])?,
                score: field(*line, "score", f[3])?,
            })
        })
        .collect()
}

pub fn parse_train_log_csv(text: &str) -> Result<Vec<EpochLog>> {
    csv_rows(text, TRAIN_LOG_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(EpochLog {
                epoch: field(line, "epoch", f[0])?,
                mean_loss: field(line, "mean_loss", f[1])?,
                lr: field(line, "lr", f[2])?,
                val_recall1: opt_field(line, "val_recall1", f[3])?,
            })
        })
        .collect()
}

pub fn parse_poses_csv(text: &str) -> Result<Vec<Pose>> {
    csv_rows(text, POSES_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let p = Pose {
                frame_idx: field(line, "frame_idx", f[0])?,
                x_m: field(line, "x_m", f[1])?,
                y_m: field(line, "y_m", f[2])?,
                heading_deg: opt_field(line, "heading_deg", f[3])?,
            };
            if !(p.x_m.is_finite() && p.y_m.is_finite()) {
                return Err(Error::Parse {
                    line,
                    msg: "position must be finite".into(),
                });
            }
            Ok(p)
        })
        .collect()
}

pub fn parse_truth_csv(text: &str) -> Result<Vec<TruthRow>> {
    csv_rows(text, TRUTH_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let cells = if f[3].is_empty() {
                Vec::new()
            } else {
                f[3].split(';')
                    .map(|c| {
                        let (r, col) = c.split_once(':').ok_or_else(|| Error::Parse {
                            line,
                            msg: format!("bad cell `{c}`"),
                        })?;
                        Ok((field(line, "row", r)?, field(line, "col", col)?))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let n: usize = field(line, "n_visible", f[2])?;
            if n != cells.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("n_visible {n} but {} cells", cells.len()),
                });
            }
            Ok(TruthRow {
                frame_idx: field(line, "frame_idx", f[0])?,
                heading_deg: field(line, "heading_deg", f[1])?,
                cells,
            })
        })
        .collect()
}
