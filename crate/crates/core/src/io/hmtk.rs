//! `HMTK` dense tensor files: magic, `u16` version, `u8` rank, `u64` dims and
//! little-endian `f64` values, row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HMTK";
pub const VERSION: u16 = 1;

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Format("tensor rank above 255".into()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut head = [0u8; 7];
    r.read_exact(&mut head).map_err(|_| Error::Format("truncated HMTK header".into()))?;
    if head[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected HMTK", &head[..4])));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("HMTK version {version}, supported {VERSION}")));
    }
    let mut shape = Vec::with_capacity(head[6] as usize);
    let mut numel: u64 = 1;
    for _ in 0..head[6] {
        let mut d = [0u8; 8];
        r.read_exact(&mut d).map_err(|_| Error::Format("truncated HMTK dims".into()))?;
        let d = u64::from_le_bytes(d);
        numel = numel
            .checked_mul(d)
            .filter(|&n| n <= (1 << 34))
            .ok_or_else(|| Error::Format("HMTK tensor too large".into()))?;
        shape.push(d as usize);
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() as u64 != numel * 8 {
        return Err(Error::Format(format!("HMTK payload of {} bytes for {numel} values", bytes.len())));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(&shape, data)
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_tensor(bytes.as_slice()).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::new(&[2], vec![1.0, -0.5]).unwrap()).unwrap();
        assert_eq!(&buf[..4], b"HMTK");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(buf[6], 1);
        assert_eq!(&buf[7..15], &2u64.to_le_bytes());
        assert_eq!(&buf[15..23], &1.0f64.to_le_bytes());
        assert_eq!(buf.len(), 31);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::zeros(&[3, 2])).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_tensor(short), Err(Error::Format(_))));
        let mut ver = buf.clone();
        ver[4] = 9;
        assert!(matches!(read_tensor(ver.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n as u64)
                .map(|i| f64::from_bits(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i) >> 2))
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
