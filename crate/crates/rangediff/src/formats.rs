//! On-disk formats. All binary layouts are little-endian.
//!
//! | file | layout |
//! |------|--------|
//! | point cloud (`.rdpc`) | `"RDPC"`, u32 version = 1, u64 count, count × f32 {x, y, z, intensity} |
//! | range view (`.rdrv`) | `"RDRV"`, u32 version = 1, u32 H, u32 W, planar f32 depth, intensity, pitch_raw, yaw_raw (H·W each), H·W occupancy bytes (0 or 1) |
//! | checkpoint (`.rdcp`) | `"RDCP"`, u32 version = 1, u32 data_dim, time_embed_dim, token_dim, head_dim, u32 hidden count, u32 per hidden width, u32 tensor count, per tensor u64 length then f64 values |
//! | box (`.csv`) | 8 rows of `x,y,z` |
//! | camera (`.csv`) | 3 rows of 4 values |
//! | cloud (`.csv`) | rows of `x,y,z,intensity`, optional header |
//! | figure (`.pgm`) | binary greymap P5, maxval 255 |
//!
//! Lines starting with `#` are ignored in every CSV input.

use std::fs;
use std::path::Path;

use rangediff_core::boxes::{Box3D, CameraModel};
use rangediff_core::denoiser::{DenoiserConfig, DenoiserParams};
use rangediff_core::grid::Grid;
use rangediff_core::range_view::{LidarPoint, PointCloud, RangeView};

use crate::error::{Error, IoContext, Result};

pub const RDPC_MAGIC: &[u8; 4] = b"RDPC";
pub const RDRV_MAGIC: &[u8; 4] = b"RDRV";
pub const RDCP_MAGIC: &[u8; 4] = b"RDCP";
pub const FORMAT_VERSION: u32 = 1;

type Decoded<T> = std::result::Result<T, String>;

/// Cursor over a byte slice that reports truncation as an error.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Decoded<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, want: &[u8; 4]) -> Decoded<()> {
        let got = self.take(4)?;
        if got != want {
            return Err(format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(want)));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        Ok(())
    }

    fn u32(&mut self) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Decoded<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Decoded<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or("length overflow")?)?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
    }

    fn f64s(&mut self, n: usize) -> Decoded<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or("length overflow")?)?;
        Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect())
    }

    fn finish(self) -> Decoded<()> {
        if self.pos != self.buf.len() {
            return Err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4]) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

pub fn encode_rdpc(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 16 * cloud.len());
    put_header(&mut out, RDPC_MAGIC);
    out.extend_from_slice(&(cloud.len() as u64).to_le_bytes());
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            put_f32(&mut out, v);
        }
    }
    out
}

pub fn decode_rdpc(bytes: &[u8]) -> Decoded<PointCloud> {
    let mut r = Reader::new(bytes);
    r.magic(RDPC_MAGIC)?;
    let count = usize::try_from(r.u64()?).map_err(|_| "count overflows")?;
    let values = r.f32s(count.checked_mul(4).ok_or("count overflows")?)?;
    r.finish()?;
    let points = values.chunks_exact(4).map(|v| LidarPoint::new(v[0], v[1], v[2], v[3])).collect();
    let cloud = PointCloud::new(points);
    cloud.validate().map_err(|e| e.to_string())?;
    Ok(cloud)
}

pub fn encode_rdrv(view: &RangeView) -> Vec<u8> {
    let (h, w) = (view.height(), view.width());
    let mut out = Vec::with_capacity(16 + 17 * h * w);
    put_header(&mut out, RDRV_MAGIC);
    put_u32(&mut out, h);
    put_u32(&mut out, w);
    for channel in [&view.depth, &view.intensity, &view.pitch_raw, &view.yaw_raw] {
        for &v in channel.as_slice() {
            put_f32(&mut out, v);
        }
    }
    out.extend(view.occupancy.as_slice().iter().map(|&o| u8::from(o)));
    out
}

pub fn decode_rdrv(bytes: &[u8]) -> Decoded<RangeView> {
    let mut r = Reader::new(bytes);
    r.magic(RDRV_MAGIC)?;
    let (h, w) = (r.u32()? as usize, r.u32()? as usize);
    let n = h.checked_mul(w).ok_or("raster size overflows")?;
    let mut channel = || -> Decoded<Grid<f64>> { Ok(Grid::from_vec(h, w, r.f32s(n)?).expect("length checked")) };
    let (depth, intensity, pitch, yaw) = (channel()?, channel()?, channel()?, channel()?);
    let occ = r
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format!("occupancy byte {other} is not 0 or 1")),
        })
        .collect::<Decoded<Vec<bool>>>()?;
    r.finish()?;
    let occupancy = Grid::from_vec(h, w, occ).expect("length checked");
    RangeView::from_channels(depth, intensity, occupancy, pitch, yaw).map_err(|e| e.to_string())
}

pub fn encode_checkpoint(params: &DenoiserParams) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::new();
    put_header(&mut out, RDCP_MAGIC);
    for v in [cfg.data_dim, cfg.time_embed_dim, cfg.token_dim, cfg.head_dim, cfg.hidden.len()] {
        put_u32(&mut out, v);
    }
    for &h in &cfg.hidden {
        put_u32(&mut out, h);
    }
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Decoded<DenoiserParams> {
    let mut r = Reader::new(bytes);
    r.magic(RDCP_MAGIC)?;
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let [data_dim, time_embed_dim, token_dim, head_dim, n_hidden] = dims;
    let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Decoded<Vec<_>>>()?;
    let config = DenoiserConfig {
        data_dim,
        time_embed_dim,
        hidden,
        token_dim,
        head_dim,
    };
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let len = usize::try_from(r.u64()?).map_err(|_| "tensor length overflows")?;
        tensors.push(r.f64s(len)?);
    }
    r.finish()?;
    DenoiserParams::from_tensors(config, &tensors).map_err(|e| e.to_string())
}

/// Rows of numbers from CSV text. A first row that does not parse is
/// taken as a header and skipped; `width` fixes the column count.
fn numeric_rows(text: &str, width: usize) -> Decoded<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == width => rows.push(v),
            Ok(v) => return Err(format!("line {line}: {} columns, expected {width}", v.len())),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("line {line}: {e}")),
        }
    }
    Ok(rows)
}

pub fn parse_cloud_csv(text: &str) -> Decoded<PointCloud> {
    let rows = numeric_rows(text, 4)?;
    let cloud = PointCloud::new(rows.iter().map(|r| LidarPoint::new(r[0], r[1], r[2], r[3])).collect());
    cloud.validate().map_err(|e| e.to_string())?;
    Ok(cloud)
}

pub fn parse_box_csv(text: &str) -> Decoded<Box3D> {
    let rows = numeric_rows(text, 3)?;
    if rows.len() != 8 {
        return Err(format!("{} corner rows, expected 8", rows.len()));
    }
    let corners = std::array::from_fn(|i| [rows[i][0], rows[i][1], rows[i][2]]);
    Box3D::new(corners).map_err(|e| e.to_string())
}

pub fn format_box_csv(b: &Box3D) -> String {
    b.corners().iter().map(|[x, y, z]| format!("{x:?},{y:?},{z:?}\n")).collect()
}

pub fn parse_camera_csv(text: &str) -> Decoded<CameraModel> {
    let rows = numeric_rows(text, 4)?;
    if rows.len() != 3 {
        return Err(format!("{} matrix rows, expected 3", rows.len()));
    }
    Ok(CameraModel::new(std::array::from_fn(|i| [rows[i][0], rows[i][1], rows[i][2], rows[i][3]])))
}

/// P5 greymap of `values` in `[0, 1]` (clamped), one byte per pixel.
pub fn encode_pgm(values: &Grid<f64>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", values.cols(), values.rows()).into_bytes();
    out.extend(values.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads a P5 greymap into `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Decoded<Grid<f64>> {
    let mut pos = 0;
    let mut token = || -> Decoded<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err("not a binary greymap (P5)".into());
    }
    let mut num = |what: &str| -> Decoded<usize> {
        token()?.parse().map_err(|_| format!("bad {what}"))
    };
    let (w, h, max) = (num("width")?, num("height")?, num("maxval")?);
    if max == 0 || max > 255 {
        return Err(format!("maxval {max} not in 1..=255"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data = bytes.get(pos + 1..).ok_or("missing raster")?;
    if data.len() != w * h {
        return Err(format!("{} raster bytes, expected {}", data.len(), w * h));
    }
    let vals = data.iter().map(|&b| b as f64 / max as f64).collect();
    Ok(Grid::from_vec(h, w, vals).expect("length checked"))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).at(path)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).at(path)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).at(path)
}

/// Loads a cloud, choosing the format from the leading magic bytes.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = read_bytes(path)?;
    let parsed = if bytes.starts_with(RDPC_MAGIC) {
        decode_rdpc(&bytes)
    } else {
        std::str::from_utf8(&bytes)
            .map_err(|_| "neither RDPC nor UTF-8 CSV".to_string())
            .and_then(parse_cloud_csv)
    };
    parsed.map_err(|m| Error::parse(path, m))
}

pub fn load_view(path: &Path) -> Result<RangeView> {
    decode_rdrv(&read_bytes(path)?).map_err(|m| Error::parse(path, m))
}

pub fn load_checkpoint(path: &Path) -> Result<DenoiserParams> {
    decode_checkpoint(&read_bytes(path)?).map_err(|m| Error::parse(path, m))
}

pub fn load_box(path: &Path) -> Result<Box3D> {
    parse_box_csv(&read_text(path)?).map_err(|m| Error::parse(path, m))
}

pub fn load_camera(path: &Path) -> Result<CameraModel> {
    parse_camera_csv(&read_text(path)?).map_err(|m| Error::parse(path, m))
}

pub fn load_pgm(path: &Path) -> Result<Grid<f64>> {
    decode_pgm(&read_bytes(path)?).map_err(|m| Error::parse(path, m))
}

/// Writes a headed CSV table.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: ToString,
{
    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        let rec: Vec<String> = row.into_iter().map(|v| v.to_string()).collect();
        w.write_record(&rec).map_err(to_err)?;
    }
    w.flush().at(path)
}
