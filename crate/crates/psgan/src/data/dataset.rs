//! Dataset directory I/O: `images/NNNN.png` + `gt/NNNN.txt`.

use std::fs;
use std::path::Path;

use super::annotations::{parse_annotations, write_annotations};
use super::sample::{build_sample, planar_to_image, Sample};
use super::synth::{generate_image, SynthSpec};
use crate::error::{Error, Result};

/// Caps data-pipeline worker threads when set to a positive integer.
pub const THREADS_ENV: &str = "PSGAN_THREADS";

fn thread_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(hw);
    cap.min(hw).min(jobs).max(1)
}

/// Runs `f` over `0..jobs` on the worker pool, preserving index order in
/// the result. Jobs are strided across threads, so outputs are identical
/// for any thread count.
fn par_map<T, F>(jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let n_threads = thread_count(jobs);
    if n_threads <= 1 {
        return (0..jobs).map(f).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..n_threads)
            .map(|t| {
                let f = &f;
                s.spawn(move || {
                    (t..jobs)
                        .step_by(n_threads)
                        .map(|i| f(i).map(|v| (i, v)))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut slots: Vec<Option<T>> = (0..jobs).map(|_| None).collect();
        for h in handles {
            for (i, v) in h.join().expect("worker thread panicked")? {
                slots[i] = Some(v);
            }
        }
        Ok(slots
            .into_iter()
            .map(|v| v.expect("every job ran"))
            .collect())
    })
}

fn stem(i: usize) -> String {
    format!("{i:04}")
}

/// Materializes `n` synthetic scenes under `dir` in the standard layout.
pub fn write_dataset(dir: &Path, spec: &SynthSpec, n: usize) -> Result<()> {
    spec.validate()?;
    let images = dir.join("images");
    let gt = dir.join("gt");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&gt)?;
    par_map(n, |i| {
        let img = generate_image(spec, i as u64)?;
        let rgb = planar_to_image(spec.image_size, spec.image_size, &img.pixels);
        rgb.save(images.join(format!("{}.png", stem(i))))?;
        fs::write(
            gt.join(format!("{}.txt", stem(i))),
            write_annotations(&img.annotations),
        )?;
        Ok(())
    })
    .map(|_: Vec<()>| ())
}

/// Loads every image/annotation pair under `dir` and builds samples,
/// silently dropping pairs where no region survives filtering. Entries
/// come back as `(id, sample)` sorted by id.
pub fn load_dataset(dir: &Path) -> Result<Vec<(String, Sample)>> {
    let images = dir.join("images");
    let gt = dir.join("gt");
    let mut ids = Vec::new();
    for entry in fs::read_dir(&images).map_err(|e| {
        Error::InvalidConfig(format!("cannot read {}: {e}", images.display()))
    })? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(s.to_string());
            }
        }
    }
    ids.sort_by_key(|s| (s.parse::<u64>().unwrap_or(u64::MAX), s.clone()));
    let loaded = par_map(ids.len(), |i| {
        let id = &ids[i];
        let rgb = image::open(images.join(format!("{id}.png")))?.to_rgb8();
        let text = fs::read_to_string(gt.join(format!("{id}.txt")))?;
        let anns = parse_annotations(&text)?;
        Ok(build_sample(&rgb, &anns)?.map(|s| (id.clone(), s)))
    })?;
    Ok(loaded.into_iter().flatten().collect())
}
