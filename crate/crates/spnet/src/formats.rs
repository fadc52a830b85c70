//! Binary containers: SPDI depth images and SPNW checkpoints, plus 16-bit
//! PNG export. All integers and floats are little-endian.
//!
//! ```text
//! SPDI  "SPDI" version:u16 kind:u8 rows:u16 cols:u16 azimuth:f64 elevation:f64 pixels:f32*
//! SPNW  "SPNW" version:u16 classes:u16 layers:u16
//!       { name_len:u16 name ndim:u8 dims:u32* data:f32* }*
//!       ["SPVB" n:u16 m:u16 weights:f64*n selected:u16*m (azimuth:f64 elevation:f64)*n]
//!       ["SPEN" aggregation:u8 m:u16 weights:f32*m]
//! ```

use std::fs;
use std::path::Path;

use spnet_core::multiview::{Aggregation, ViewBank};
use spnet_core::nn::{Params, SpnetConfig, SpnetModel, Tensor, DEFAULT_DROPOUT, PARAM_NAMES};
use spnet_core::{DepthImage, ImageKind, Rotation};

use crate::error::{Error, IoContext, Result};

pub const SPDI_MAGIC: &[u8; 4] = b"SPDI";
pub const SPNW_MAGIC: &[u8; 4] = b"SPNW";
pub const SPVB_TAG: &[u8; 4] = b"SPVB";
pub const SPEN_TAG: &[u8; 4] = b"SPEN";
const VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], String> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, String> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>, String> {
        let raw = self.take(n.checked_mul(4).ok_or("size overflow")?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<(), String> {
        let got = self.array::<4>()?;
        if &got != expected {
            return Err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(expected)
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<(), String> {
        match self.u16()? {
            VERSION => Ok(()),
            v => Err(format!("unsupported version {v}")),
        }
    }

    fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn u16_of(v: usize, what: &str) -> Result<u16, String> {
    u16::try_from(v).map_err(|_| format!("{what} {v} does not fit in 16 bits"))
}

pub fn encode_spdi(image: &DepthImage) -> Result<Vec<u8>, String> {
    let mut out = Vec::with_capacity(27 + 4 * image.pixels.len());
    out.extend_from_slice(SPDI_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(image.kind.code());
    out.extend_from_slice(&u16_of(image.rows, "rows")?.to_le_bytes());
    out.extend_from_slice(&u16_of(image.cols, "cols")?.to_le_bytes());
    out.extend_from_slice(&image.rotation.azimuth().to_le_bytes());
    out.extend_from_slice(&image.rotation.elevation().to_le_bytes());
    for p in &image.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// The decoded image has an empty `source_id`; the container does not store it.
pub fn decode_spdi(bytes: &[u8]) -> Result<DepthImage, String> {
    let mut r = Reader::new(bytes);
    r.magic(SPDI_MAGIC)?;
    r.version()?;
    let code = r.u8()?;
    let kind = ImageKind::from_code(code).ok_or_else(|| format!("unknown image kind {code}"))?;
    let rows = r.u16()? as usize;
    let cols = r.u16()? as usize;
    let rotation = Rotation::new(r.f64()?, r.f64()?);
    let pixels = r.f32s(rows * cols)?;
    if !r.is_done() {
        return Err("trailing bytes after pixels".into());
    }
    Ok(DepthImage { rows, cols, pixels, kind, source_id: String::new(), rotation })
}

/// Learned output of the ensemble stage.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleHead {
    pub aggregation: Aggregation,
    pub view_weights: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SpnetModel<f32>,
    pub bank: Option<ViewBank>,
    pub ensemble: Option<EnsembleHead>,
}

impl Checkpoint {
    pub fn backbone(model: SpnetModel<f32>) -> Self {
        Checkpoint { model, bank: None, ensemble: None }
    }
}

pub fn encode_spnw(ckpt: &Checkpoint) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    out.extend_from_slice(SPNW_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u16_of(ckpt.model.config.classes, "class count")?.to_le_bytes());
    out.extend_from_slice(&u16_of(PARAM_NAMES.len(), "layer count")?.to_le_bytes());
    for (name, t) in ckpt.model.params.named() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(bank) = &ckpt.bank {
        out.extend_from_slice(SPVB_TAG);
        out.extend_from_slice(&u16_of(bank.len(), "view count")?.to_le_bytes());
        out.extend_from_slice(&u16_of(bank.selected.len(), "selected count")?.to_le_bytes());
        for w in &bank.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for &s in &bank.selected {
            out.extend_from_slice(&u16_of(s, "view index")?.to_le_bytes());
        }
        for r in &bank.rotations {
            out.extend_from_slice(&r.azimuth().to_le_bytes());
            out.extend_from_slice(&r.elevation().to_le_bytes());
        }
    }
    if let Some(head) = &ckpt.ensemble {
        out.extend_from_slice(SPEN_TAG);
        out.push(head.aggregation.code());
        out.extend_from_slice(&u16_of(head.view_weights.len(), "view count")?.to_le_bytes());
        for w in &head.view_weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_spnw(bytes: &[u8]) -> Result<Checkpoint, String> {
    let mut r = Reader::new(bytes);
    r.magic(SPNW_MAGIC)?;
    r.version()?;
    let classes = r.u16()? as usize;
    let layers = r.u16()? as usize;
    if layers != PARAM_NAMES.len() {
        return Err(format!("expected {} layers, found {layers}", PARAM_NAMES.len()));
    }
    let mut tensors = Vec::with_capacity(layers);
    for expected in PARAM_NAMES {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| "layer name is not UTF-8")?;
        if name != expected {
            return Err(format!("expected layer {expected}, found {name}"));
        }
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflow")?;
        tensors.push(Tensor::from_vec(&shape, r.f32s(n)?).map_err(|e| e.to_string())?);
    }
    let hidden = tensors[8].shape().first().copied().unwrap_or(0);
    let config = SpnetConfig { classes, hidden, dropout_rate: DEFAULT_DROPOUT };
    let model = SpnetModel::from_params(config, Params { tensors }).map_err(|e| e.to_string())?;

    let mut ckpt = Checkpoint::backbone(model);
    while !r.is_done() {
        let tag = r.array::<4>()?;
        if &tag == SPVB_TAG && ckpt.bank.is_none() {
            let n = r.u16()? as usize;
            let m = r.u16()? as usize;
            let weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            let selected = (0..m).map(|_| r.u16().map(usize::from)).collect::<Result<Vec<_>, _>>()?;
            if selected.iter().any(|&s| s >= n) {
                return Err("selected view index out of range".into());
            }
            let rotations =
                (0..n).map(|_| Ok(Rotation::new(r.f64()?, r.f64()?))).collect::<Result<Vec<_>, String>>()?;
            ckpt.bank = Some(ViewBank { rotations, weights, selected });
        } else if &tag == SPEN_TAG && ckpt.ensemble.is_none() {
            let code = r.u8()?;
            let aggregation = Aggregation::from_code(code).ok_or_else(|| format!("unknown aggregation {code}"))?;
            let m = r.u16()? as usize;
            ckpt.ensemble = Some(EnsembleHead { aggregation, view_weights: r.f32s(m)? });
        } else {
            return Err(format!("unexpected section {:?}", String::from_utf8_lossy(&tag)));
        }
    }
    Ok(ckpt)
}

/// Grayscale 16-bit PNG with `round(65535 * clamp(value, 0, 1))`.
pub fn encode_png16(image: &DepthImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, image.cols as u32, image.rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header()?;
    let data: Vec<u8> = image
        .pixels
        .iter()
        .flat_map(|&p| ((p.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16).to_be_bytes())
        .collect();
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(out)
}

/// Writes via a temporary sibling and a rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).at(dir)?;
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

fn format_err(path: &Path, msg: String) -> Error {
    Error::Format { path: path.to_path_buf(), msg }
}

pub fn write_spdi(path: &Path, image: &DepthImage) -> Result<()> {
    write_atomic(path, &encode_spdi(image).map_err(|m| format_err(path, m))?)
}

pub fn read_spdi(path: &Path) -> Result<DepthImage> {
    decode_spdi(&fs::read(path).at(path)?).map_err(|m| format_err(path, m))
}

pub fn write_spnw(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_spnw(ckpt).map_err(|m| format_err(path, m))?)
}

pub fn read_spnw(path: &Path) -> Result<Checkpoint> {
    decode_spnw(&fs::read(path).at(path)?).map_err(|m| format_err(path, m))
}
