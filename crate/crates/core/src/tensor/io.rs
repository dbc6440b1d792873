//! MSC3 binary tensor files: the 4-byte magic `MSC3`, three little-endian
//! `u64` dims, then every entry as a little-endian `f64` in layout order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{checked_len, offset, slice_shape, Mode, SliceMatrix, Tensor3};
use crate::error::{MscError, Result};

pub const MAGIC: &[u8; 4] = b"MSC3";
const HEADER_LEN: u64 = 4 + 3 * 8;

pub fn write_tensor<W: Write>(t: &Tensor3, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    for d in t.dims() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &x in t.data() {
        w.write_f64::<LittleEndian>(x)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_tensor(t: &Tensor3, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_tensor(t, BufWriter::new(f))
}

fn read_header<R: Read>(r: &mut R) -> Result<([usize; 3], usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated("magic"))?;
    if &magic != MAGIC {
        return Err(MscError::Format(format!("bad magic {magic:?}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let raw = r.read_u64::<LittleEndian>().map_err(truncated("header"))?;
        *d = usize::try_from(raw)
            .map_err(|_| MscError::Format(format!("dimension {raw} does not fit in memory")))?;
    }
    let len = checked_len(dims).map_err(|e| MscError::Format(e.to_string()))?;
    Ok((dims, len))
}

fn truncated(what: &'static str) -> impl Fn(io::Error) -> MscError {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            MscError::Format(format!("truncated {what}"))
        } else {
            MscError::Io(e)
        }
    }
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor3> {
    let (dims, len) = read_header(&mut r)?;
    let mut data = Vec::with_capacity(len.min(1 << 24));
    for _ in 0..len {
        data.push(r.read_f64::<LittleEndian>().map_err(truncated("payload"))?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(MscError::Format("trailing bytes after payload".into()));
    }
    Tensor3::new(dims, data).map_err(|e| MscError::Format(e.to_string()))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor3> {
    read_tensor(BufReader::new(File::open(path)?))
}

/// Random-access reader that pulls single slices out of an MSC3 file
/// without loading the rest of the tensor.
#[derive(Debug)]
pub struct TensorFile {
    file: BufReader<File>,
    dims: [usize; 3],
}

impl TensorFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let mut file = BufReader::new(File::open(path)?);
        let (dims, len) = read_header(&mut file)?;
        let expected = HEADER_LEN + 8 * len as u64;
        let actual = file.get_ref().metadata()?.len();
        if actual != expected {
            return Err(MscError::Format(format!(
                "file holds {actual} bytes, header implies {expected}"
            )));
        }
        Ok(Self { file, dims })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn read_run(&mut self, start: usize, n: usize, out: &mut Vec<f64>) -> Result<()> {
        self.file.seek(SeekFrom::Start(HEADER_LEN + 8 * start as u64))?;
        for _ in 0..n {
            out.push(self.file.read_f64::<LittleEndian>().map_err(truncated("payload"))?);
        }
        Ok(())
    }

    pub fn read_slice(&mut self, mode: Mode, index: usize) -> Result<SliceMatrix> {
        let dims = self.dims;
        let [m1, m2, m3] = dims;
        let size = dims[mode.axis()];
        if index >= size {
            return Err(MscError::Range {
                mode: mode.number(),
                index,
                size,
            });
        }
        let (rows, cols) = slice_shape(dims, mode);
        let mut data = Vec::with_capacity(rows * cols);
        match mode {
            Mode::One => self.read_run(offset(dims, index, 0, 0), m2 * m3, &mut data)?,
            Mode::Two => {
                for i in 0..m1 {
                    self.read_run(offset(dims, i, index, 0), m3, &mut data)?;
                }
            }
            Mode::Three => {
                for i in 0..m1 {
                    for j in 0..m2 {
                        self.read_run(offset(dims, i, j, index), 1, &mut data)?;
                    }
                }
            }
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(MscError::Format(format!("non-finite value in slice at {pos}")));
        }
        SliceMatrix::new(rows, cols, data)
    }
}
