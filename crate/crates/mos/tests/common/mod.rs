use std::path::Path;

use swar_mos::{RatingStore, Study};

/// Ten speakers (five male, five female) with three pairs each; audio files
/// are tiny placeholder WAVs.
pub fn fixture_study(dir: &Path) -> Study {
    let mut lines = String::new();
    for s in 0..10 {
        let gender = if s < 5 { "male" } else { "female" };
        for c in 0..3 {
            let id = format!("s{s}c{c}");
            for kind in ["orig", "clone"] {
                let samples = vec![0.0f32; 64];
                let clip = swar_core::dsp::AudioClip::new(samples, 22050, "fx");
                swar_core::dsp::write_wav(dir.join(format!("{id}.{kind}.wav")), &clip).unwrap();
            }
            lines.push_str(&format!(
                "{{\"pair_id\":\"{id}\",\"speaker_id\":\"spk{s}\",\"gender\":\"{gender}\",\"original\":\"{id}.orig.wav\",\"cloned\":\"{id}.clone.wav\"}}\n"
            ));
        }
    }
    let path = dir.join("study.jsonl");
    std::fs::write(&path, lines).unwrap();
    Study::load(&path).unwrap()
}

#[allow(dead_code)]
pub fn open_store(dir: &Path) -> RatingStore {
    RatingStore::open(dir.join("ratings"), 5).unwrap()
}
