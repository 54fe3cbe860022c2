#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use pvcnn_core::rng::SplitMix64;

pub const LABELS: [&str; 4] = ["normal", "cracked", "dusty", "shadowed"];

/// Writes `counts[c]` PNGs per class under `dir/images/<label>/` plus
/// `dir/manifest.csv`. Class `c` has a bright vertical band in the `c`-th
/// quarter of the image.
pub fn write_dataset(dir: &Path, counts: [usize; 4], size: u32, seed: u64) -> PathBuf {
    let mut rng = SplitMix64::new(seed);
    let mut manifest = String::from("relative_path,label\n");
    for (c, &n) in counts.iter().enumerate() {
        let sub = dir.join("images").join(LABELS[c]);
        std::fs::create_dir_all(&sub).unwrap();
        for i in 0..n {
            let img = RgbImage::from_fn(size, size, |x, _| {
                let lit = (x * 4 / size) as usize == c;
                let base = if lit { 200.0 } else { 50.0 };
                let v = (base + rng.uniform(-30.0, 30.0)) as u8;
                Rgb([v, v / 2 + 20, 255 - v])
            });
            let rel = format!("images/{}/{i:03}.png", LABELS[c]);
            img.save(dir.join(&rel)).unwrap();
            manifest.push_str(&format!("{rel},{}\n", LABELS[c]));
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn pvcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pvcnn"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
