use std::io::{Read, Write};

use crate::attributes::{AttributeVector, NUM_ATTRIBUTES};
use crate::error::{Error, Result};
use crate::types::Embedding;

pub const FEATURES_MAGIC: &[u8; 4] = b"AMFT";
const FEATURES_VERSION: u32 = 1;

/// Little-endian f32 sidecar: header (magic, version, dim, attribute count,
/// record count) followed by one `embedding ++ attributes` record per
/// detection line.
pub fn write_features<W: Write>(mut w: W, dim: usize, records: &[(&Embedding, &AttributeVector)]) -> Result<()> {
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&FEATURES_VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(NUM_ATTRIBUTES as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity((dim + NUM_ATTRIBUTES) * 4);
    for (e, a) in records {
        if e.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: e.dim() });
        }
        buf.clear();
        for v in e.as_slice().iter().chain(a.values()) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_features<R: Read>(mut r: R) -> Result<(usize, Vec<(Embedding, AttributeVector)>)> {
    let bad = |m: String| Error::File { path: "features".into(), msg: m };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURES_MAGIC {
        return Err(bad("not a feature file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURES_VERSION {
        return Err(bad(format!("unsupported feature file version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let n_attr = read_u32(&mut r)? as usize;
    if n_attr != NUM_ATTRIBUTES {
        return Err(bad(format!("expected {NUM_ATTRIBUTES} attributes per record, found {n_attr}")));
    }
    let mut cnt = [0u8; 8];
    r.read_exact(&mut cnt)?;
    let count = u64::from_le_bytes(cnt) as usize;
    let width = dim + NUM_ATTRIBUTES;
    let mut buf = vec![0u8; width * 4];
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let vals: Vec<f64> = buf.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
        let attrs = AttributeVector::prob_from_slice(&vals[dim..])?;
        out.push((Embedding(vals[..dim].to_vec()), attrs));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok((dim, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let e = Embedding(vec![0.5, -0.25, 0.125]);
        let a = AttributeVector::splat(1.0).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, 3, &[(&e, &a), (&e, &a)]).unwrap();
        assert_eq!(buf.len(), 24 + 2 * 35 * 4);
        let (dim, recs) = read_features(buf.as_slice()).unwrap();
        assert_eq!(dim, 3);
        assert_eq!(recs, vec![(e.clone(), a), (e, a)]);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let e = Embedding(vec![0.5, -0.25]);
        let a = AttributeVector::splat(0.0).unwrap();
        let mut buf = Vec::new();
        write_features(&mut buf, 2, &[(&e, &a)]).unwrap();
        buf.pop();
        assert!(read_features(buf.as_slice()).is_err());
        assert!(read_features(&b"XXXX"[..]).is_err());
    }
}
