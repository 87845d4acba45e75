//! Run-directory outputs: sample CSVs with a metadata sidecar, the
//! line-structured metrics log, and portable-pixel-map scatter plots.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use tim_core::sampler::SampleSchedule;
use tim_core::{Result, TimError};

/// One row per sample, columns named `x0..x{dim-1}`.
pub fn write_sample_csv(path: &Path, samples: &[f64], dim: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in samples.chunks_exact(dim) {
        let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Sidecar record describing how a sample CSV was produced.
#[derive(serde::Serialize)]
pub struct SampleMeta<'a> {
    pub schedule: &'a SampleSchedule,
    pub n: usize,
    pub nfe: usize,
    pub class: Option<u32>,
    pub ema: bool,
    pub wall_seconds: f64,
}

pub fn write_sample_meta(path: &Path, meta: &SampleMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| TimError::Config(format!("metadata encode: {e}")))?;
    std::fs::write(path, json)?;
    Ok(())
}

/// Appends one JSON record per line to the metrics log.
pub struct MetricsLog {
    w: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<MetricsLog> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MetricsLog { w: BufWriter::new(file) })
    }

    pub fn append<T: serde::Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)
            .map_err(|e| TimError::Config(format!("metrics encode: {e}")))?;
        writeln!(self.w, "{line}")?;
        self.w.flush()?;
        Ok(())
    }
}

/// Renders 2-D samples as a binary PPM scatter image (white background,
/// darkened pixels where samples land).
pub fn write_scatter_ppm(path: &Path, samples: &[f64], dim: usize, size: usize) -> Result<()> {
    if dim != 2 {
        return Err(TimError::Config(format!(
            "scatter images need 2-D samples, got dimension {dim}"
        )));
    }
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for row in samples.chunks_exact(2) {
        lo_x = lo_x.min(row[0]);
        hi_x = hi_x.max(row[0]);
        lo_y = lo_y.min(row[1]);
        hi_y = hi_y.max(row[1]);
    }
    let pad_x = 0.05 * (hi_x - lo_x).max(1e-9);
    let pad_y = 0.05 * (hi_y - lo_y).max(1e-9);
    let (lo_x, hi_x) = (lo_x - pad_x, hi_x + pad_x);
    let (lo_y, hi_y) = (lo_y - pad_y, hi_y + pad_y);
    let mut counts = vec![0u32; size * size];
    for row in samples.chunks_exact(2) {
        let px = ((row[0] - lo_x) / (hi_x - lo_x) * (size - 1) as f64).round() as usize;
        let py = ((row[1] - lo_y) / (hi_y - lo_y) * (size - 1) as f64).round() as usize;
        // Image rows grow downward; flip y so the plot reads math-style.
        counts[(size - 1 - py) * size + px] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{size} {size}\n255\n")?;
    for &c in &counts {
        let shade = if c == 0 {
            255u8
        } else {
            let intensity = (c as f64 / max).sqrt();
            (230.0 * (1.0 - intensity)) as u8
        };
        w.write_all(&[shade, shade, 255.min(shade as u16 + 30) as u8])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_ppm_outputs() {
        let dir = std::env::temp_dir().join("tim-output-test");
        std::fs::create_dir_all(&dir).unwrap();
        let samples = vec![0.0, 0.0, 1.0, 1.0, -1.0, 0.5];
        let csv = dir.join("s.csv");
        write_sample_csv(&csv, &samples, 2).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("x0,x1\n"));
        assert_eq!(text.lines().count(), 4);

        let ppm = dir.join("s.ppm");
        write_scatter_ppm(&ppm, &samples, 2, 64).unwrap();
        let bytes = std::fs::read(&ppm).unwrap();
        let header = b"P6\n64 64\n255\n";
        assert!(bytes.starts_with(header));
        assert_eq!(bytes.len(), header.len() + 64 * 64 * 3);
        std::fs::remove_dir_all(&dir).ok();
    }
}
