//! OMAP1: `"OMAP1\n"`, an ASCII header line `"<img_w> <img_h> <stride>\n"`, then
//! `rows × cols` little-endian f32 values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::occlusion_map::OcclusionMap;

pub const OMAP_MAGIC: &[u8] = b"OMAP1\n";

pub fn encode_omap(map: &OcclusionMap) -> Vec<u8> {
    let header = format!("{} {} {}\n", map.img_w(), map.img_h(), map.stride());
    let mut out = Vec::with_capacity(OMAP_MAGIC.len() + header.len() + 4 * map.values().len());
    out.extend_from_slice(OMAP_MAGIC);
    out.extend_from_slice(header.as_bytes());
    for &v in map.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_omap(bytes: &[u8]) -> Result<OcclusionMap> {
    let rest = bytes
        .strip_prefix(OMAP_MAGIC)
        .ok_or_else(|| Error::Format("missing OMAP1 magic".into()))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("unterminated OMAP1 header".into()))?;
    let header = std::str::from_utf8(&rest[..nl]).map_err(|_| Error::Format("OMAP1 header is not ASCII".into()))?;
    let fields: Vec<u32> = header
        .split(' ')
        .map(|f| f.parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format(format!("bad OMAP1 header '{header}'")))?;
    let [img_w, img_h, stride] = fields[..] else {
        return Err(Error::Format(format!("OMAP1 header needs 3 fields, got '{header}'")));
    };
    if stride == 0 || img_w == 0 || img_h == 0 {
        return Err(Error::Format(format!("OMAP1 header '{header}' has a zero field")));
    }
    let n = img_w.div_ceil(stride) as u64 * img_h.div_ceil(stride) as u64;
    let body = &rest[nl + 1..];
    if body.len() as u64 != 4 * n {
        return Err(Error::Format(format!("OMAP1 body has {} bytes, expected {}", body.len(), 4 * n)));
    }
    let values: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    OcclusionMap::from_values(img_w, img_h, stride, values).map_err(|e| Error::Format(format!("OMAP1 body: {e}")))
}

pub fn save_omap(path: &Path, map: &OcclusionMap) -> Result<()> {
    super::write_bytes(path, &encode_omap(map))
}

pub fn load_omap(path: &Path) -> Result<OcclusionMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_omap(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern() -> OcclusionMap {
        OcclusionMap::zeros(64, 64, 4).unwrap().map_values(|i, _| ((i * 37) % 101) as f64 / 100.0)
    }

    #[test]
    fn file_size_arithmetic() {
        let m = pattern();
        assert_eq!((m.rows(), m.cols()), (16, 16));
        let bytes = encode_omap(&m);
        assert_eq!(bytes.len(), 6 + "64 64 4\n".len() + 4 * 256);
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let bytes = encode_omap(&pattern());
        let back = decode_omap(&bytes).unwrap();
        assert_eq!(encode_omap(&back), bytes);
        // f32-representable values survive the map round trip too
        assert_eq!(decode_omap(&encode_omap(&back)).unwrap(), back);
    }

    #[test]
    fn rejects_bad_input() {
        let good = encode_omap(&pattern());
        let mut bad_magic = good.clone();
        bad_magic[4] = b'2';
        assert!(matches!(decode_omap(&bad_magic), Err(Error::Format(_))));
        assert!(matches!(decode_omap(&good[..good.len() - 1]), Err(Error::Format(_))));
        let mut bad_header = OMAP_MAGIC.to_vec();
        bad_header.extend_from_slice(b"64 x 4\n");
        assert!(matches!(decode_omap(&bad_header), Err(Error::Format(_))));
        let mut out_of_range = good.clone();
        let at = out_of_range.len() - 4;
        out_of_range[at..].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_omap(&out_of_range), Err(Error::Format(_))));
    }

    #[test]
    fn mutated_bytes_never_panic() {
        let good = encode_omap(&pattern());
        for i in 0..good.len().min(40) {
            for b in [0u8, b' ', b'\n', 0xff] {
                let mut m = good.clone();
                m[i] = b;
                let _ = decode_omap(&m);
            }
        }
    }
}
