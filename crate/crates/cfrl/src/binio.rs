//! Little-endian primitives shared by the binary file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::IoError;

pub struct Writer {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl Writer {
    pub fn create(path: &Path) -> Result<Self, IoError> {
        let f = File::create(path).map_err(|e| IoError::at(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner: BufWriter::new(f) })
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<(), IoError> {
        self.inner.write_all(b).map_err(|e| IoError::at(&self.path, e))
    }

    pub fn u8(&mut self, v: u8) -> Result<(), IoError> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<(), IoError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<(), IoError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<(), IoError> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<(), IoError> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.inner.flush().map_err(|e| IoError::at(&self.path, e))?;
        self.inner.get_ref().sync_all().map_err(|e| IoError::at(&self.path, e))
    }
}

pub struct Reader {
    path: PathBuf,
    inner: BufReader<File>,
}

impl Reader {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let f = File::open(path).map_err(|e| IoError::at(path, e))?;
        Ok(Self { path: path.to_path_buf(), inner: BufReader::new(f) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes<const N: usize>(&mut self) -> Result<[u8; N], IoError> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| IoError::at(&self.path, e))?;
        Ok(b)
    }

    pub fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    pub fn f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IoError> {
        (0..n).map(|_| self.f64()).collect()
    }

    /// Reads a length that must not exceed `max`.
    pub fn len(&mut self, max: u64) -> Result<usize, IoError> {
        let n = self.u64()?;
        if n > max {
            return Err(IoError::corrupt(&self.path, format!("length {n} exceeds limit {max}")));
        }
        Ok(n as usize)
    }

    pub fn expect_end(&mut self) -> Result<(), IoError> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b).map_err(|e| IoError::at(&self.path, e))? {
            0 => Ok(()),
            _ => Err(IoError::corrupt(&self.path, "trailing bytes".to_string())),
        }
    }
}

pub fn write_header(w: &mut Writer, magic: &[u8; 8], version: u32) -> Result<(), IoError> {
    w.bytes(magic)?;
    w.u32(version)
}

pub fn read_header(r: &mut Reader, magic: &[u8; 8], version: u32) -> Result<(), IoError> {
    let found: [u8; 8] = r.bytes()?;
    if &found != magic {
        return Err(IoError::corrupt(
            r.path(),
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&found), String::from_utf8_lossy(magic)),
        ));
    }
    let v = r.u32()?;
    if v != version {
        return Err(IoError::corrupt(r.path(), format!("unsupported version {v}, expected {version}")));
    }
    Ok(())
}
