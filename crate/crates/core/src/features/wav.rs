//! RIFF WAV reader for 16-bit signed PCM, mono, 16 kHz.

use super::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

fn read_u16(buf: &[u8], off: usize) -> u16 {
    u16::from_le_bytes([buf[off], buf[off + 1]])
}

fn read_u32(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes([buf[off], buf[off + 1], buf[off + 2], buf[off + 3]])
}

/// Read a mono 16-bit PCM 16 kHz WAV file; anything else is rejected with a
/// diagnostic. Sample values are quantised to i16 / 32768.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let name = path.display();
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Audio(format!("{name}: not a RIFF/WAVE file")));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(&bytes, pos + 4) as usize;
        let body_start = pos + 8;
        if body_start + size > bytes.len() {
            return Err(Error::Audio(format!("{name}: truncated chunk {:?}", String::from_utf8_lossy(id))));
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Audio(format!("{name}: fmt chunk too short")));
                }
                fmt = Some((read_u16(body, 0), read_u16(body, 2), read_u32(body, 4), read_u16(body, 14)));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    let (format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Audio(format!("{name}: missing fmt chunk")))?;
    if format != 1 {
        return Err(Error::Audio(format!("{name}: format tag {format}, only PCM (1) supported")));
    }
    if channels != 1 {
        return Err(Error::Audio(format!("{name}: {channels} channels, only mono supported")));
    }
    if bits != 16 {
        return Err(Error::Audio(format!("{name}: {bits}-bit samples, only 16-bit supported")));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::Audio(format!("{name}: sample rate {rate} Hz, expected {SAMPLE_RATE}")));
    }
    let data = data.ok_or_else(|| Error::Audio(format!("{name}: missing data chunk")))?;
    if data.len() % 2 != 0 {
        return Err(Error::Audio(format!("{name}: odd data chunk length")));
    }
    let samples: Vec<f64> = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    AudioClip::new(samples, rate)
}
