//! Bodies of the fuzz targets under `fuzz/`, shared with the seed replay
//! test so that checked-in seeds are exercised by `cargo test`. Each
//! function accepts arbitrary bytes and panics only on a broken invariant.
//!
//! Archive and checkpoint inputs are framed as a little-endian `u32`
//! manifest length, the manifest, then the payload.

use amtl::formats::{decode_archive, encode_archive, Checkpoint};
use amtl::frontend::{mfcc, parse_wav, MfccConfig};

use crate::RunConfig;

pub fn split_framed(data: &[u8]) -> Option<(&[u8], &[u8])> {
    let len = u32::from_le_bytes(data.get(..4)?.try_into().ok()?) as usize;
    let rest = &data[4..];
    (len <= rest.len()).then(|| rest.split_at(len))
}

pub fn frame(manifest: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut v = (manifest.len() as u32).to_le_bytes().to_vec();
    v.extend_from_slice(manifest);
    v.extend_from_slice(payload);
    v
}

/// Returns whether the input decoded.
pub fn wav(data: &[u8]) -> bool {
    let Ok(audio) = parse_wav(data) else { return false };
    assert!(audio.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    // Two seconds is enough to reach every branch and keeps inputs cheap.
    if audio.samples.len() <= 32_000 && audio.sample_rate == 16_000 {
        if let Ok(feats) = mfcc(&audio, &MfccConfig::default()) {
            assert!(feats.is_finite());
        }
    }
    true
}

/// Anything accepted must survive a re-encode unchanged.
pub fn archive(data: &[u8]) -> bool {
    let Some((manifest, payload)) = split_framed(data) else { return false };
    let Ok(utts) = decode_archive(manifest, payload) else { return false };
    let refs: Vec<_> = utts.iter().map(|(s, u)| (*s, u)).collect();
    let (m2, p2) = encode_archive(&refs, "x.f32").expect("decoded archive re-encodes");
    let again = decode_archive(m2.as_bytes(), &p2).expect("re-encoded archive decodes");
    assert_eq!(again, utts);
    true
}

pub fn checkpoint(data: &[u8]) -> bool {
    let Some((manifest, payload)) = split_framed(data) else { return false };
    let Ok(ck) = Checkpoint::decode(manifest, payload) else { return false };
    let (m2, p2) = ck.encode("x.f32").expect("decoded checkpoint re-encodes");
    assert_eq!(Checkpoint::decode(m2.as_bytes(), &p2).expect("re-encoded checkpoint decodes"), ck);
    let _ = ck.restore();
    true
}

/// The resolved-config echo must parse back to the same config.
pub fn config(data: &[u8]) -> bool {
    let Ok(text) = std::str::from_utf8(data) else { return false };
    let Ok(cfg) = RunConfig::from_json(text) else { return false };
    let echoed = RunConfig::from_json(&cfg.to_json()).expect("echoed config parses");
    assert_eq!(echoed, cfg);
    true
}
