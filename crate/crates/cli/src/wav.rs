use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{CliError, CliResult};

/// Reads a mono 16-bit PCM or 32-bit float WAV file.
pub fn read_mono(path: &Path) -> CliResult<(Vec<f64>, u32)> {
    let mut reader = WavReader::open(path).map_err(|e| CliError::io(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(CliError::io(
            path,
            format!("expected mono audio, found {} channels", spec.channels),
        ));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
        (format, bits) => {
            return Err(CliError::io(
                path,
                format!("unsupported sample format {format:?} with {bits} bits"),
            ))
        }
    }
    .map_err(|e| CliError::io(path, e))?;
    Ok((samples, spec.sample_rate))
}

/// Writes a mono 32-bit float WAV file.
pub fn write_mono(path: &Path, samples: &[f64], sample_rate: u32) -> CliResult<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| CliError::io(path, e))?;
    for &s in samples {
        writer.write_sample(s as f32).map_err(|e| CliError::io(path, e))?;
    }
    writer.finalize().map_err(|e| CliError::io(path, e))
}
