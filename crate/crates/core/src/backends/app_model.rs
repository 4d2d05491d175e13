//! Deterministic stand-in for the containerized application.
//!
//! The application state is a hash chain advanced once per work unit,
//! seeded from the input data. A checkpoint image is the input followed by
//! a trailer holding the chain head and the progress marker, so a run that
//! stops, migrates and resumes ends with exactly the bytes of a run that
//! never stopped, and only if every hop carried the state intact.

use sha2::{Digest, Sha256};

const MAGIC: &[u8; 8] = b"BEEAPPv1";
const TRAILER_LEN: usize = 32 + 8 + 8 + MAGIC.len();

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppImage {
    input: Vec<u8>,
    progress: u64,
    state: [u8; 32],
}

impl AppImage {
    pub fn fresh(input: Vec<u8>) -> Self {
        let mut h = Sha256::new();
        h.update(b"bee-app-state");
        h.update(&input);
        Self { input, progress: 0, state: h.finalize().into() }
    }

    /// Parses a checkpoint image; anything without a valid trailer is
    /// treated as initial input data.
    pub fn decode(bytes: &[u8]) -> Self {
        if bytes.len() >= TRAILER_LEN && &bytes[bytes.len() - MAGIC.len()..] == MAGIC {
            let t = &bytes[bytes.len() - TRAILER_LEN..];
            let input_len = u64::from_le_bytes(t[40..48].try_into().expect("8 bytes")) as usize;
            if input_len + TRAILER_LEN == bytes.len() {
                return Self {
                    input: bytes[..input_len].to_vec(),
                    progress: u64::from_le_bytes(t[32..40].try_into().expect("8 bytes")),
                    state: t[..32].try_into().expect("32 bytes"),
                };
            }
        }
        Self::fresh(bytes.to_vec())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.input.len() + TRAILER_LEN);
        out.extend_from_slice(&self.input);
        out.extend_from_slice(&self.state);
        out.extend_from_slice(&self.progress.to_le_bytes());
        out.extend_from_slice(&(self.input.len() as u64).to_le_bytes());
        out.extend_from_slice(MAGIC);
        out
    }

    pub fn progress(&self) -> u64 {
        self.progress
    }

    pub fn input(&self) -> &[u8] {
        &self.input
    }

    /// Runs the chain forward to `target`. Never moves backwards.
    pub fn advance_to(&mut self, target: u64) {
        while self.progress < target {
            let mut h = Sha256::new();
            h.update(self.state);
            h.update(self.progress.to_le_bytes());
            self.state = h.finalize().into();
            self.progress += 1;
        }
    }
}

/// Size of the encoded image once `bytes` has been loaded by the app.
pub fn image_len(bytes: &[u8]) -> usize {
    let has_trailer = bytes.len() >= TRAILER_LEN
        && &bytes[bytes.len() - MAGIC.len()..] == MAGIC
        && u64::from_le_bytes(bytes[bytes.len() - 16..bytes.len() - 8].try_into().expect("8 bytes")) as usize
            + TRAILER_LEN
            == bytes.len();
    if has_trailer {
        bytes.len()
    } else {
        bytes.len() + TRAILER_LEN
    }
}

/// Encoded image of `input` after `progress` units of uninterrupted work.
pub fn reference_output(input: &[u8], progress: u64) -> Vec<u8> {
    let mut img = AppImage::fresh(input.to_vec());
    img.advance_to(progress);
    img.encode()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_equals_uninterrupted() {
        let mut a = AppImage::fresh(b"deck".to_vec());
        a.advance_to(40);
        let mut b = AppImage::decode(&a.encode());
        assert_eq!(b.progress(), 40);
        b.advance_to(100);
        assert_eq!(b.encode(), reference_output(b"deck", 100));
    }

    #[test]
    fn image_len_matches_encoding() {
        assert_eq!(image_len(b"abc"), AppImage::fresh(b"abc".to_vec()).encode().len());
        let enc = reference_output(b"abc", 3);
        assert_eq!(image_len(&enc), enc.len());
    }

    #[test]
    fn raw_input_decodes_fresh() {
        let img = AppImage::decode(b"plain input");
        assert_eq!(img.progress(), 0);
        assert_eq!(img.input(), b"plain input");
        let empty = AppImage::decode(b"");
        assert_eq!(empty, AppImage::fresh(vec![]));
    }

    #[test]
    fn corrupted_state_diverges() {
        let mut a = AppImage::fresh(b"x".to_vec());
        a.advance_to(5);
        let mut bytes = a.encode();
        bytes[1] ^= 0xff; // state byte
        let mut b = AppImage::decode(&bytes);
        b.advance_to(10);
        assert_ne!(b.encode(), reference_output(b"x", 10));
    }
}
