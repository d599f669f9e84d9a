//! Little-endian binary containers: point clouds (`TCLP`), depth images
//! (`TCLD`), embedding stores (`TCLE`) and checkpoints (`TCLC`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DepthImage, TactilePointCloud};

pub const CLOUD_MAGIC: &[u8; 4] = b"TCLP";
pub const IMAGE_MAGIC: &[u8; 4] = b"TCLD";
pub const STORE_MAGIC: &[u8; 4] = b"TCLE";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCLC";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Format(format!(
                "truncated {}: needed {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.buf.len()
            ))),
        }
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad magic for {}: expected {:?}, found {:?}",
                self.what,
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::Format(format!("unsupported {} version {v}", self.what)));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.too_big())?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn too_big(&self) -> Error {
        Error::Format(format!("{} header declares an impossible size", self.what))
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{} has {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn encode_cloud(cloud: &TactilePointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + cloud.len() * 12);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        put_f32s(&mut out, p);
    }
    out
}

pub fn decode_cloud(bytes: &[u8]) -> Result<TactilePointCloud> {
    let mut r = Reader::new(bytes, "point cloud");
    r.magic(CLOUD_MAGIC)?;
    r.version()?;
    let n = r.u32()? as usize;
    let flat = r.f32s(n.checked_mul(3).ok_or_else(|| r.too_big())?)?;
    r.finish()?;
    Ok(TactilePointCloud::new(
        flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
    ))
}

pub fn encode_image(img: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.pixels.len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    put_f32s(&mut out, &img.pixels);
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<DepthImage> {
    let mut r = Reader::new(bytes, "depth image");
    r.magic(IMAGE_MAGIC)?;
    let w = r.u32()? as usize;
    let h = r.u32()? as usize;
    let pixels = r.f32s(w.checked_mul(h).ok_or_else(|| r.too_big())?)?;
    r.finish()?;
    DepthImage::new(w, h, pixels)
}

/// Raw embedding-store payload: a shared width and `(id, vector)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct StoreEntries {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f32>)>,
}

pub fn encode_store(store: &StoreEntries) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(STORE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    out.extend_from_slice(&(store.entries.len() as u32).to_le_bytes());
    for (id, v) in &store.entries {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Format(format!("id longer than 65535 bytes: {id:.32}…")))?;
        if v.len() != store.dim {
            return Err(Error::Shape(format!(
                "entry {id} has {} values, store width is {}",
                v.len(),
                store.dim
            )));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        put_f32s(&mut out, v);
    }
    Ok(out)
}

pub fn decode_store(bytes: &[u8]) -> Result<StoreEntries> {
    let mut r = Reader::new(bytes, "embedding store");
    r.magic(STORE_MAGIC)?;
    r.version()?;
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("embedding id is not UTF-8".into()))?
            .to_string();
        entries.push((id, r.f32s(dim)?));
    }
    r.finish()?;
    Ok(StoreEntries { dim, entries })
}

/// A named float32 tensor in a checkpoint. Rank 0 holds one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: &str, dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let t = Self { name: name.to_string(), dims, data };
        if t.numel() != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {name} has {} values for dims {:?}",
                t.data.len(),
                t.dims
            )));
        }
        Ok(t)
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }
}

pub fn encode_checkpoint(tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let len = u16::try_from(t.name.len())
            .map_err(|_| Error::Format("tensor name too long".into()))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Format(format!("tensor {} has too many dims", t.name)))?;
        if t.numel() != t.data.len() {
            return Err(Error::Shape(format!("tensor {} payload mismatch", t.name)));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(rank);
        for d in &t.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        put_f32s(&mut out, &t.data);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| r.too_big())?;
        let data = r.f32s(numel)?;
        out.push(Tensor { name, dims, data });
    }
    r.finish()?;
    Ok(out)
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &TactilePointCloud) -> Result<()> {
    write_file(path.as_ref(), &encode_cloud(cloud))
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<TactilePointCloud> {
    decode_cloud(&read_file(path.as_ref())?)
}

pub fn write_image(path: impl AsRef<Path>, img: &DepthImage) -> Result<()> {
    write_file(path.as_ref(), &encode_image(img))
}

pub fn read_image(path: impl AsRef<Path>) -> Result<DepthImage> {
    decode_image(&read_file(path.as_ref())?)
}

pub fn write_store(path: impl AsRef<Path>, store: &StoreEntries) -> Result<()> {
    write_file(path.as_ref(), &encode_store(store)?)
}

pub fn read_store(path: impl AsRef<Path>) -> Result<StoreEntries> {
    decode_store(&read_file(path.as_ref())?)
}

pub fn write_checkpoint(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(tensors)?)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud() -> TactilePointCloud {
        TactilePointCloud::new(vec![[1.0, -2.5, 0.125], [f32::MIN_POSITIVE, 9.99, 3.5]])
    }

    #[test]
    fn cloud_layout() {
        let b = encode_cloud(&cloud());
        assert_eq!(&b[..4], b"TCLP");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(b.len(), 12 + 24);
        assert_eq!(decode_cloud(&b).unwrap(), cloud());
    }

    #[test]
    fn image_layout() {
        let img = DepthImage::new(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.5]).unwrap();
        let b = encode_image(&img);
        assert_eq!(&b[..4], b"TCLD");
        assert_eq!(b.len(), 12 + 24);
        assert_eq!(decode_image(&b).unwrap(), img);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let mut b = encode_cloud(&cloud());
        assert!(matches!(decode_cloud(&b[..b.len() - 1]), Err(Error::Format(_))));
        b[0] = b'X';
        assert!(matches!(decode_cloud(&b), Err(Error::Format(_))));
        let mut b = encode_cloud(&cloud());
        b[4] = 2;
        assert!(matches!(decode_cloud(&b), Err(Error::Format(_))));
        assert!(matches!(decode_image(b"TCLD\xff\xff\xff\xff\xff\xff\xff\xff"), Err(Error::Format(_))));
        assert!(matches!(decode_checkpoint(b"TCL"), Err(Error::Format(_))));
    }

    #[test]
    fn store_and_checkpoint_round_trip() {
        let s = StoreEntries {
            dim: 2,
            entries: vec![("a".into(), vec![1.0, 0.0]), ("é".into(), vec![0.6, 0.8])],
        };
        assert_eq!(decode_store(&encode_store(&s).unwrap()).unwrap(), s);
        let ts = vec![
            Tensor::new("w", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::new("log_tau", vec![], vec![-2.65]).unwrap(),
        ];
        assert_eq!(decode_checkpoint(&encode_checkpoint(&ts).unwrap()).unwrap(), ts);
    }
}
