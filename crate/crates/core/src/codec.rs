//! Little-endian primitives shared by the binary file formats.

use std::io::{self, Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Real;

pub(crate) fn write_u8(w: &mut impl Write, v: u8) -> io::Result<()> {
    w.write_all(&[v])
}

pub(crate) fn write_u16(w: &mut impl Write, v: u16) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| truncated(e, what))?;
    Ok(buf)
}

pub(crate) fn truncated(e: io::Error, what: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format(format!("truncated file while reading {what}"))
    } else {
        Error::Io(e)
    }
}

pub(crate) fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    Ok(read_array::<1>(r, what)?[0])
}

pub(crate) fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    Ok(u16::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn expect_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let got: [u8; 4] = read_array(r, "magic")?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

pub(crate) fn expect_version(r: &mut impl Read, want: u16) -> Result<()> {
    let v = read_u16(r, "version")?;
    if v != want {
        return Err(Error::Format(format!(
            "unsupported version {v}, expected {want}"
        )));
    }
    Ok(())
}

pub(crate) fn write_reals(w: &mut impl Write, values: &[Real]) -> io::Result<()> {
    for &v in values {
        write_f64(w, v as f64)?;
    }
    Ok(())
}

pub(crate) fn read_reals(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<Real>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(read_f64(r, what)? as Real);
    }
    Ok(out)
}

pub(crate) fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe)? {
        0 => Ok(()),
        _ => Err(Error::Format("trailing bytes after end of data".into())),
    }
}
