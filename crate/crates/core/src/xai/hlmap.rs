//! Portable float grid: `HLMAP1`, u16 LE height, u16 LE width, six zero
//! bytes, then row-major f32 LE values.

use ndarray::{Array2, ArrayView2};

use super::XaiError;

pub const HLMAP_MAGIC: &[u8; 6] = b"HLMAP1";
pub const HLMAP_HEADER_LEN: usize = 16;

pub fn encode_hlmap(map: ArrayView2<'_, f64>) -> Result<Vec<u8>, XaiError> {
    let (h, w) = map.dim();
    let (h16, w16) = match (u16::try_from(h), u16::try_from(w)) {
        (Ok(h), Ok(w)) => (h, w),
        _ => return Err(XaiError::InvalidMapFile(format!("{h}x{w} exceeds the u16 header"))),
    };
    let mut out = Vec::with_capacity(HLMAP_HEADER_LEN + 4 * h * w);
    out.extend_from_slice(HLMAP_MAGIC);
    out.extend_from_slice(&h16.to_le_bytes());
    out.extend_from_slice(&w16.to_le_bytes());
    out.extend_from_slice(&[0; 6]);
    for &v in map.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_hlmap(bytes: &[u8]) -> Result<Array2<f64>, XaiError> {
    let bad = |m: &str| XaiError::InvalidMapFile(m.to_string());
    if bytes.len() < HLMAP_HEADER_LEN || &bytes[..6] != HLMAP_MAGIC {
        return Err(bad("missing HLMAP1 header"));
    }
    let h = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let w = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = &bytes[HLMAP_HEADER_LEN..];
    if body.len() != 4 * h * w {
        return Err(bad("payload length does not match header"));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((h, w), values).map_err(|e| bad(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layout() {
        let bytes = encode_hlmap(array![[0.0, 1.0, 0.5]].view()).unwrap();
        assert_eq!(&bytes[..6], b"HLMAP1");
        assert_eq!(&bytes[6..10], &[1, 0, 3, 0]);
        assert_eq!(&bytes[10..16], &[0; 6]);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 12);
    }

    #[test]
    fn round_trip() {
        let m = array![[0.25, 0.0], [1.0, 0.125], [0.5, 0.75]];
        assert_eq!(decode_hlmap(&encode_hlmap(m.view()).unwrap()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_hlmap(b"HLMAP2\0\0\0\0\0\0\0\0\0\0").is_err());
        let mut bytes = encode_hlmap(array![[1.0]].view()).unwrap();
        bytes.pop();
        assert!(decode_hlmap(&bytes).is_err());
    }
}
