//! Length-prefixed, checksummed record container.
//!
//! Each record is laid out as:
//!
//! ```text
//! u64 little-endian   payload length L
//! u32 little-endian   masked CRC-32C of the 8 length bytes
//! [u8; L]             payload
//! u32 little-endian   masked CRC-32C of the payload
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

const MASK_DELTA: u32 = 0xa282_ead8;

/// Framing overhead per record.
pub const RECORD_OVERHEAD: usize = 16;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record {index}: length checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    LengthCrc {
        index: usize,
        stored: u32,
        computed: u32,
    },
    #[error("record {index}: payload checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    PayloadCrc {
        index: usize,
        stored: u32,
        computed: u32,
    },
    #[error("record {index}: file truncated")]
    Truncated { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Applies the rotate-and-add permutation to a raw CRC-32C.
pub fn mask_crc(crc: u32) -> u32 {
    ((crc >> 15) | (crc << 17)).wrapping_add(MASK_DELTA)
}

pub fn masked_crc32c(bytes: &[u8]) -> u32 {
    mask_crc(crc32c::crc32c(bytes))
}

pub struct RecordWriter<W: Write> {
    inner: W,
    written: usize,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, written: 0 }
    }

    pub fn write_record(&mut self, payload: &[u8]) -> io::Result<()> {
        let len = (payload.len() as u64).to_le_bytes();
        self.inner.write_all(&len)?;
        self.inner.write_all(&masked_crc32c(&len).to_le_bytes())?;
        self.inner.write_all(payload)?;
        self.inner.write_all(&masked_crc32c(payload).to_le_bytes())?;
        self.written += 1;
        Ok(())
    }

    pub fn records_written(&self) -> usize {
        self.written
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl RecordWriter<BufWriter<File>> {
    /// Creates (or truncates) `path` for writing.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self::new(BufWriter::new(File::create(path)?)))
    }
}

/// Sequential reader that verifies both checksums before yielding a payload.
pub struct RecordReader<R: Read> {
    inner: R,
    index: usize,
    done: bool,
}

impl<R: Read> RecordReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            index: 0,
            done: false,
        }
    }

    fn read_next(&mut self) -> Result<Option<Vec<u8>>, RecordError> {
        let index = self.index;
        let mut len_bytes = [0u8; 8];
        match read_full(&mut self.inner, &mut len_bytes)? {
            0 => return Ok(None),
            8 => {}
            _ => return Err(RecordError::Truncated { index }),
        }
        let stored = read_u32(&mut self.inner, index)?;
        let computed = masked_crc32c(&len_bytes);
        if stored != computed {
            return Err(RecordError::LengthCrc {
                index,
                stored,
                computed,
            });
        }
        let len = u64::from_le_bytes(len_bytes);
        let mut payload = Vec::new();
        let got = (&mut self.inner).take(len).read_to_end(&mut payload)?;
        if (got as u64) < len {
            return Err(RecordError::Truncated { index });
        }
        let stored = read_u32(&mut self.inner, index)?;
        let computed = masked_crc32c(&payload);
        if stored != computed {
            return Err(RecordError::PayloadCrc {
                index,
                stored,
                computed,
            });
        }
        self.index += 1;
        Ok(Some(payload))
    }
}

impl<R: Read> Iterator for RecordReader<R> {
    type Item = Result<Vec<u8>, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.read_next() {
            Ok(Some(payload)) => Some(Ok(payload)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads every record of a container file.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Vec<u8>>, RecordError> {
    let file = File::open(path)?;
    RecordReader::new(BufReader::new(file)).collect()
}

/// Reads until `buf` is full or EOF; returns the byte count.
fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

fn read_u32(r: &mut impl Read, index: usize) -> Result<u32, RecordError> {
    let mut buf = [0u8; 4];
    if read_full(r, &mut buf)? != 4 {
        return Err(RecordError::Truncated { index });
    }
    Ok(u32::from_le_bytes(buf))
}
