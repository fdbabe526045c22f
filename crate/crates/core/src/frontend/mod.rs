//! Feature extraction: 25 ms Hamming-windowed frames every 10 ms, magnitude
//! spectrum, 40 triangular mel filters, log, orthonormal DCT-II.

pub mod fft;
pub mod mfcc;
pub mod wav;

pub use mfcc::{frame_signal, hamming_window, log_mel_energies, mfcc, MelFilterbank, MfccConfig};
pub use wav::{parse_wav, read_wav, AudioBuffer};
