//! The `HCSC` container used for model checkpoints and code dumps.
//!
//! ```text
//! bytes 0..4    b"HCSC"
//! bytes 4..8    format version, u32 little-endian
//! bytes 8..16   header length in bytes, u64 little-endian
//! header        UTF-8 text, one `key=value` per line
//! payload       f32 little-endian blobs, in the order of the header's
//!               `blob=<name> <d0>x<d1>x...` lines
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::DataError;

pub const MAGIC: &[u8; 4] = b"HCSC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Blob {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self, DataError> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DataError::SizeMismatch(format!(
                "blob {name} declares {shape:?} ({n} values) but holds {}",
                data.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(DataError::Header(format!("invalid blob name {name:?}")));
        }
        Ok(Blob { name, shape, data })
    }
}

/// Ordered metadata entries and tensor blobs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub blobs: Vec<Blob>,
}

fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, DataError> {
        self.get(key)
            .ok_or_else(|| DataError::Header(format!("missing header key {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, DataError> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| DataError::Header(format!("cannot parse {key}={v}")))
    }

    pub fn push_blob(&mut self, blob: Blob) {
        self.blobs.push(blob);
    }

    pub fn blob(&self, name: &str) -> Result<&Blob, DataError> {
        self.blobs
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| DataError::Header(format!("missing blob {name}")))
    }

    fn header(&self) -> String {
        let mut header = String::new();
        for (k, v) in &self.meta {
            header.push_str(k);
            header.push('=');
            header.push_str(v);
            header.push('\n');
        }
        for b in &self.blobs {
            header.push_str(&format!("blob={} {}\n", b.name, shape_string(&b.shape)));
        }
        header
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let header = self.header();
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(header.as_bytes())?;
        let mut buf = Vec::with_capacity(4096);
        for b in &self.blobs {
            for chunk in b.data.chunks(1024) {
                buf.clear();
                buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
                out.write_all(&buf)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.blobs.iter().map(|b| b.data.len() * 4).sum();
        let mut out = Vec::with_capacity(1024 + payload);
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < 16 {
            return Err(DataError::SizeMismatch(format!(
                "container is {} bytes, shorter than its fixed prefix",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(DataError::ContainerMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(DataError::Version {
                expected: VERSION,
                found: version,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(16))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                DataError::SizeMismatch(format!("header length {header_len} exceeds file size {}", bytes.len()))
            })?;
        let header =
            std::str::from_utf8(&bytes[16..header_end]).map_err(|_| DataError::Header("header is not UTF-8".into()))?;

        let mut meta = Vec::new();
        let mut declared = Vec::new();
        for line in header.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| DataError::Header(format!("malformed header line {line:?}")))?;
            if k == "blob" {
                let (name, shape) = v
                    .split_once(' ')
                    .ok_or_else(|| DataError::Header(format!("malformed blob line {line:?}")))?;
                let shape = shape
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|_| DataError::Header(format!("bad blob shape in {line:?}")))?;
                declared.push((name.to_string(), shape));
            } else {
                meta.push((k.to_string(), v.to_string()));
            }
        }

        let mut offset = header_end;
        let mut blobs = Vec::with_capacity(declared.len());
        for (name, shape) in declared {
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| DataError::SizeMismatch(format!("blob {name} shape {shape:?} overflows")))?;
            let end = offset.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
                DataError::SizeMismatch(format!(
                    "blob {name} {shape:?} needs {n} bytes at offset {offset}, file has {}",
                    bytes.len()
                ))
            })?;
            let data = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            blobs.push(Blob { name, shape, data });
            offset = end;
        }
        if offset != bytes.len() {
            return Err(DataError::SizeMismatch(format!(
                "{} trailing bytes after the declared blobs",
                bytes.len() - offset
            )));
        }
        Ok(Container { meta, blobs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        let io_err = |source| DataError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        self.write_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DataError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Container::from_bytes(&bytes).map_err(|e| e.at(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set("kind", "test");
        c.set("lambda", 0.1f64);
        c.push_blob(Blob::new("w", vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap());
        c.push_blob(Blob::new("b", vec![1], vec![-0.0]).unwrap());
        c
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"HCSC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = std::str::from_utf8(&bytes[16..16 + hl]).unwrap();
        assert_eq!(header, "kind=test\nlambda=0.1\nblob=w 2x3\nblob=b 1\n");
        assert_eq!(bytes.len(), 16 + hl + 7 * 4);
        assert_eq!(&bytes[16 + hl..16 + hl + 4], &1.0f32.to_le_bytes());
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.blob("b").unwrap().data[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn corrupt_containers() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 2]),
            Err(DataError::SizeMismatch(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(Container::from_bytes(&extra), Err(DataError::SizeMismatch(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Container::from_bytes(&magic), Err(DataError::ContainerMagic)));
        let mut ver = bytes.clone();
        ver[4] = 2;
        assert!(matches!(
            Container::from_bytes(&ver),
            Err(DataError::Version { expected: 1, found: 2 })
        ));
        let mut hl = bytes;
        hl[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Container::from_bytes(&hl), Err(DataError::SizeMismatch(_))));
    }

    #[test]
    fn blob_size_checked() {
        assert!(Blob::new("x", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Blob::new("has space", vec![1], vec![0.0]).is_err());
    }
}
