//! `WKNM` model checkpoints: a config block followed by named `f64` arrays.
//!
//! ```text
//! "WKNM" | version u32
//! kind u32 | family tag u32 | F u32 | L u32 | num_classes u32 | input_length u32
//! { name_len u32 | name | count u64 | f64 × count }*   (until end of file)
//! ```

use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::network::{FirstLayerKind, ModelConfig, Network};
use crate::wavelets::WaveletFamily;

pub const MODEL_MAGIC: &[u8; 4] = b"WKNM";
pub const MODEL_VERSION: u32 = 1;

const KIND_WAVELET: u32 = 0;
const KIND_PLAIN: u32 = 1;
const KIND_SIN: u32 = 2;
const NO_FAMILY: u32 = u32::MAX;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

pub fn to_bytes(net: &Network) -> Result<Vec<u8>> {
    let cfg = net.config();
    let (kind, family) = match cfg.first_layer {
        FirstLayerKind::Wavelet(f) => (KIND_WAVELET, f.tag()),
        FirstLayerKind::Plain => (KIND_PLAIN, NO_FAMILY),
        FirstLayerKind::Sin => (KIND_SIN, WaveletFamily::Sin.tag()),
    };
    let mut w = Writer::new();
    w.bytes(MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u32(kind);
    w.u32(family);
    w.u32(to_u32(cfg.filters, "filter count")?);
    w.u32(to_u32(cfg.kernel_len, "kernel length")?);
    w.u32(to_u32(cfg.num_classes, "class count")?);
    w.u32(to_u32(cfg.input_length, "input length")?);
    for (name, values) in net.params() {
        w.str(name)?;
        w.u64(values.len() as u64);
        for &v in values {
            w.f64(v);
        }
    }
    Ok(w.into_inner())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(MODEL_MAGIC, MODEL_VERSION)?;
    let kind_at = r.offset();
    let kind = r.u32("model kind")?;
    let family_at = r.offset();
    let family = r.u32("family tag")?;
    let lookup = |tag| {
        WaveletFamily::from_tag(tag).ok_or_else(|| r.error_at(family_at, format!("unknown wavelet family tag {tag}")))
    };
    let first_layer = match kind {
        KIND_WAVELET => FirstLayerKind::Wavelet(lookup(family)?),
        KIND_PLAIN => FirstLayerKind::Plain,
        KIND_SIN => FirstLayerKind::Sin,
        other => return Err(r.error_at(kind_at, format!("unknown model kind {other}"))),
    };
    let config = ModelConfig {
        first_layer,
        filters: r.u32("filter count")? as usize,
        kernel_len: r.u32("kernel length")? as usize,
        num_classes: r.u32("class count")? as usize,
        input_length: r.u32("input length")? as usize,
    };
    let mut net = Network::build(config, 0).map_err(|e| r.error_at(kind_at, format!("invalid model config: {e}")))?;
    let expected: Vec<(&'static str, usize)> = net.params().iter().map(|(n, p)| (*n, p.len())).collect();
    let mut loaded: Vec<Option<Vec<f64>>> = vec![None; expected.len()];
    while !r.at_end() {
        let at = r.offset();
        let name = r.str("parameter name")?;
        let Some(slot) = expected.iter().position(|(n, _)| *n == name) else {
            return Err(r.error_at(at, format!("unexpected parameter `{name}`")));
        };
        if loaded[slot].is_some() {
            return Err(r.error_at(at, format!("duplicate parameter `{name}`")));
        }
        let count_at = r.offset();
        let count = r.u64("element count")?;
        if count != expected[slot].1 as u64 {
            return Err(r.error_at(count_at, format!("`{name}` has {count} values, model expects {}", expected[slot].1)));
        }
        let values = (0..count).map(|_| r.f64("parameter value")).collect::<Result<Vec<f64>>>()?;
        loaded[slot] = Some(values);
    }
    if let Some(missing) = loaded.iter().position(Option::is_none) {
        return Err(r.error_at(r.offset(), format!("missing parameter `{}`", expected[missing].0)));
    }
    for ((_, dst), src) in net.params_mut().into_iter().zip(loaded) {
        dst.copy_from_slice(&src.expect("checked above"));
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nets() -> Vec<Network> {
        [
            FirstLayerKind::Wavelet(WaveletFamily::Laplace),
            FirstLayerKind::Wavelet(WaveletFamily::Morlet),
            FirstLayerKind::Plain,
            FirstLayerKind::Sin,
        ]
        .into_iter()
        .map(|kind| {
            let cfg = ModelConfig {
                first_layer: kind,
                filters: 3,
                kernel_len: 6,
                num_classes: 3,
                input_length: 48,
            };
            let mut net = Network::build(cfg, 9).unwrap();
            // make u non-trivial so the round trip exercises every array
            for (name, p) in net.params_mut() {
                if name == "first.u" {
                    p.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 1.0 / 3.0);
                }
            }
            net
        })
        .collect()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for net in nets() {
            let bytes = to_bytes(&net).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back.config(), net.config());
            for ((na, a), (nb, b)) in net.params().iter().zip(back.params()) {
                assert_eq!(*na, nb);
                assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn layout_matches_format() {
        let net = &nets()[2];
        let bytes = to_bytes(net).unwrap();
        assert_eq!(&bytes[..4], b"WKNM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), MODEL_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), KIND_PLAIN);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), NO_FAMILY);
        let records: usize = net.params().iter().map(|(n, p)| 4 + n.len() + 8 + 8 * p.len()).sum();
        assert_eq!(bytes.len(), 32 + records);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = to_bytes(&nets()[0]).unwrap();
        let err = from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("offset 8"));
        let mut bad = bytes.clone();
        bad[12] = 99;
        assert!(from_bytes(&bad).unwrap_err().to_string().contains("offset 12"));
        let err = from_bytes(&bytes[..32]).unwrap_err().to_string();
        assert!(err.contains("missing parameter `first.u`"), "{err}");
    }
}
