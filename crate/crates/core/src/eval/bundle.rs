use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::svg;
use crate::dsp::{
    encode_matrix, mel_spectrogram, write_wav, AudioClip, DspConfig, MelFrontend, ALGN_MAGIC, CORR_MAGIC, MELS_MAGIC,
    MELS_VERSION,
};
use crate::{Error, Result};

/// Pearson correlation between every frame of `a` and every frame of `b`.
///
/// Each clip first has its per-channel time average removed, so the shared
/// filterbank tilt does not dominate. Entry `(i, j)` then correlates frame
/// `i` of `a` with frame `j` of `b` across channels; a constant frame
/// correlates 0 with everything.
pub fn frame_correlation(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.ncols(), "channel counts differ");
    let standardize = |m: &Array2<f64>| {
        let mut z = match m.mean_axis(ndarray::Axis(0)) {
            Some(mean) => m - &mean,
            None => m.clone(),
        };
        for mut row in z.rows_mut() {
            let mean = row.mean().unwrap_or(0.0);
            row.mapv_inplace(|v| v - mean);
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row.mapv_inplace(|v| v / norm);
            } else {
                row.fill(0.0);
            }
        }
        z
    };
    let (za, zb) = (standardize(a), standardize(b));
    za.dot(&zb.t()).mapv(|v| v.clamp(-1.0, 1.0))
}

pub struct ComparisonInput<'a> {
    pub original: &'a AudioClip,
    pub cloned: &'a AudioClip,
    pub original_embedding: Option<&'a [f64]>,
    pub cloned_embedding: Option<&'a [f64]>,
    pub alignment: Option<&'a Array2<f64>>,
}

/// Index of the files written by [`comparison_bundle`], saved as
/// `bundle.json` in the output directory. Paths are relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleFiles {
    pub original_wav: PathBuf,
    pub cloned_wav: PathBuf,
    pub original_mel: PathBuf,
    pub cloned_mel: PathBuf,
    pub correlation: PathBuf,
    pub correlation_svg: PathBuf,
    pub embeddings: Option<PathBuf>,
    pub alignment: Option<PathBuf>,
    pub alignment_svg: Option<PathBuf>,
    pub original_frames: usize,
    pub cloned_frames: usize,
}

#[derive(Serialize)]
struct Embeddings<'a> {
    original: Option<&'a [f64]>,
    cloned: Option<&'a [f64]>,
}

pub fn comparison_bundle(input: &ComparisonInput, dsp: &DspConfig, out_dir: &Path) -> Result<BundleFiles> {
    for clip in [input.original, input.cloned] {
        if clip.sample_rate_hz != dsp.sampling_rate_hz {
            return Err(Error::Contract(format!(
                "comparison clips must be {} Hz, `{}` is {} Hz",
                dsp.sampling_rate_hz, clip.source_id, clip.sample_rate_hz
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io_at(out_dir, e))?;
    let frontend = MelFrontend::synthesizer(dsp);
    let orig_mel = mel_spectrogram(input.original, &frontend)?;
    let clone_mel = mel_spectrogram(input.cloned, &frontend)?;
    let corr = frame_correlation(&orig_mel.frames, &clone_mel.frames);

    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io_at(&path, e))?;
        Ok(PathBuf::from(name))
    };
    write_wav(out_dir.join("original.wav"), input.original)?;
    write_wav(out_dir.join("cloned.wav"), input.cloned)?;
    let mut files = BundleFiles {
        original_wav: "original.wav".into(),
        cloned_wav: "cloned.wav".into(),
        original_mel: write("original.mels", &encode_matrix(MELS_MAGIC, MELS_VERSION, &orig_mel.frames))?,
        cloned_mel: write("cloned.mels", &encode_matrix(MELS_MAGIC, MELS_VERSION, &clone_mel.frames))?,
        correlation: write("correlation.corr", &encode_matrix(CORR_MAGIC, MELS_VERSION, &corr))?,
        correlation_svg: write(
            "correlation.svg",
            svg::heatmap(&corr, "frame-wise mel correlation (rows: original, cols: cloned)").as_bytes(),
        )?,
        embeddings: None,
        alignment: None,
        alignment_svg: None,
        original_frames: orig_mel.n_frames(),
        cloned_frames: clone_mel.n_frames(),
    };
    if input.original_embedding.is_some() || input.cloned_embedding.is_some() {
        let body = serde_json::to_vec_pretty(&Embeddings {
            original: input.original_embedding,
            cloned: input.cloned_embedding,
        })?;
        files.embeddings = Some(write("embeddings.json", &body)?);
    }
    if let Some(al) = input.alignment {
        files.alignment = Some(write("alignment.algn", &encode_matrix(ALGN_MAGIC, MELS_VERSION, al))?);
        files.alignment_svg = Some(write(
            "alignment.svg",
            svg::heatmap(&al.t().to_owned(), "attention alignment (x: decoder step, y: character)").as_bytes(),
        )?);
    }
    write("bundle.json", &serde_json::to_vec_pretty(&files)?)?;
    Ok(files)
}
