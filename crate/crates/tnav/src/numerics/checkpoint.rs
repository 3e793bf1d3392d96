//! Binary checkpoint format.
//!
//! Layout: magic "TNAV1", then for each tensor in lexicographic name order:
//! u32 name length, UTF-8 name, u32 rank, one u64 per dim, then the
//! little-endian float64 payload. Round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 5] = b"TNAV1";

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, t) in params.iter() {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let mut params = ParamSet::new();
    let mut prev_name: Option<String> = None;
    loop {
        let mut len4 = [0u8; 4];
        match r.read_exact(&mut len4) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("bad tensor name: {e}")))?;
        if let Some(prev) = &prev_name {
            if *prev >= name {
                return Err(Error::Checkpoint(format!(
                    "tensor names out of order: `{prev}` before `{name}`"
                )));
            }
        }
        let mut rank4 = [0u8; 4];
        r.read_exact(&mut rank4)?;
        let rank = u32::from_le_bytes(rank4) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut d8 = [0u8; 8];
            r.read_exact(&mut d8)?;
            shape.push(u64::from_le_bytes(d8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut v8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut v8)?;
            data.push(f64::from_le_bytes(v8));
        }
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        prev_name = Some(name.clone());
        params.insert(name, tensor);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = ParamSet::new();
        p.insert("b.weight", Tensor::new(vec![2, 3], vec![0.1, -0.2, 3.0, 4.5, -5.0, 1e-300]).unwrap());
        p.insert("a.bias", Tensor::vector(vec![1.0 / 3.0, -7.125]).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tnav");
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert_eq!(q.len(), 2);
        for (name, t) in p.iter() {
            let u = q.get(name).unwrap();
            assert_eq!(t.shape, u.shape);
            let a: Vec<u64> = t.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = u.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        // saving the loaded set reproduces identical bytes
        let path2 = dir.path().join("m2.tnav");
        save(&q, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tnav");
        std::fs::write(&path, b"NOPE!").unwrap();
        assert!(load(&path).is_err());
    }
}
