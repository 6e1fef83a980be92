//! Dataset handling, train/eval protocols, confusion-matrix reporting and a
//! deterministic synthetic corpus generator.
//!
//! A dataset root holds one subdirectory per class with PGM/PPM images;
//! `X.mask.pgm` next to `X.pgm` is its foreground mask, absent masks default
//! to all-foreground. Two evaluation protocols are first-class: `whole`
//! classifies the entire dataset including the training images, `holdout`
//! classifies only images the training never saw.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imgio::{self, GrayImage, Mask};
use crate::model::{validate_label, TrainedModel};
use crate::scalar::Real;

/// On-disk dataset: ordered class labels and per-class image lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    /// `items[c]` lists class `c`'s images in filename order.
    pub items: Vec<Vec<DatasetEntry>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

/// One image to classify, tagged with its true class index.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub class: usize,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Evaluation regime: classify everything (the historical protocol, which
/// includes the training images) or only held-out images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Whole,
    Holdout,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Whole => "whole",
            Protocol::Holdout => "holdout",
        })
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "whole" => Ok(Protocol::Whole),
            "holdout" => Ok(Protocol::Holdout),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

/// Seeded train/eval partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<EvalItem>,
    pub eval: Vec<EvalItem>,
    pub protocol: Protocol,
}

/// Row-major confusion counts (rows = true class, columns = predicted) plus a
/// separate per-class tally of items that produced no verdict at all.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub failed: Vec<usize>,
}

impl ConfusionMatrix {
    fn new(classes: &[String]) -> Self {
        ConfusionMatrix {
            classes: classes.to_vec(),
            counts: vec![vec![0; classes.len()]; classes.len()],
            failed: vec![0; classes.len()],
        }
    }

    /// Row-normalized percentages over classified items; an empty row is all
    /// zeros. Non-empty rows sum to 100 up to rounding.
    pub fn rates(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let total: usize = row.iter().sum();
                if total == 0 {
                    vec![0.0; row.len()]
                } else {
                    row.iter()
                        .map(|&n| 100.0 * n as f64 / total as f64)
                        .collect()
                }
            })
            .collect()
    }

    /// Diagonal percentage for class `c` (its recall).
    pub fn diagonal_rate(&self, c: usize) -> f64 {
        self.rates()[c][c]
    }

    pub fn total_items(&self) -> usize {
        self.counts.iter().flatten().sum::<usize>() + self.failed.iter().sum::<usize>()
    }

    /// Plain-text report with counts and row percentages.
    pub fn render_text(&self, protocol: Protocol) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.len())
            .chain([8])
            .max()
            .unwrap();
        let mut out = format!("protocol: {protocol}\ncounts (rows = true class):\n");
        out.push_str(&format!("{:>width$}", ""));
        for c in &self.classes {
            out.push_str(&format!("  {c:>width$}"));
        }
        out.push_str(&format!("  {:>width$}\n", "failed"));
        for (r, row) in self.counts.iter().enumerate() {
            out.push_str(&format!("{:>width$}", self.classes[r]));
            for &n in row {
                out.push_str(&format!("  {n:>width$}"));
            }
            out.push_str(&format!("  {:>width$}\n", self.failed[r]));
        }
        out.push_str("row %:\n");
        let rates = self.rates();
        for (r, row) in rates.iter().enumerate() {
            out.push_str(&format!("{:>width$}", self.classes[r]));
            for &p in row {
                out.push_str(&format!("  {:>width$}", format!("{p:.2}%")));
            }
            out.push('\n');
        }
        out
    }

    /// CSV rows `true_class,pred_class,count` under a `#protocol=` header.
    /// Failures appear as pred_class `FAILED`.
    pub fn to_csv(&self, protocol: Protocol) -> String {
        let mut out = format!("#protocol={protocol}\ntrue_class,pred_class,count\n");
        for (r, row) in self.counts.iter().enumerate() {
            for (c, &n) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{n}\n", self.classes[r], self.classes[c]));
            }
            out.push_str(&format!("{},FAILED,{}\n", self.classes[r], self.failed[r]));
        }
        out
    }
}

/// Loads a dataset root: one subdirectory per class, classes sorted
/// lexicographically, images sorted by filename, masks paired by the
/// `X.mask.pgm` convention.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let mut class_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "{} contains no class directories",
            root.display()
        )));
    }

    let mut classes = Vec::new();
    let mut items = Vec::new();
    for dir in class_dirs {
        let label = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        validate_label(&label)?;
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().map(|s| s.to_string_lossy().into_owned());
                match name {
                    Some(n) => {
                        (n.ends_with(".pgm") || n.ends_with(".ppm")) && !n.ends_with(".mask.pgm")
                    }
                    None => false,
                }
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory {label:?} contains no images"
            )));
        }
        let entries = files
            .into_iter()
            .map(|image| {
                let mask_path = imgio::mask_path_for(&image);
                let mask = mask_path.is_file().then_some(mask_path);
                DatasetEntry { image, mask }
            })
            .collect();
        classes.push(label);
        items.push(entries);
    }
    Ok(Dataset { classes, items })
}

/// Every image of the dataset as an [`EvalItem`], class-major in file order.
pub fn all_items(ds: &Dataset) -> Vec<EvalItem> {
    ds.items
        .iter()
        .enumerate()
        .flat_map(|(c, entries)| {
            entries.iter().map(move |e| EvalItem {
                class: c,
                image: e.image.clone(),
                mask: e.mask.clone(),
            })
        })
        .collect()
}

/// Draws `n_train` images per class uniformly without replacement (seeded)
/// and builds the evaluation set per `protocol`: the whole dataset, or the
/// complement of the training set.
pub fn split(ds: &Dataset, n_train: usize, seed: u64, protocol: Protocol) -> Result<Split> {
    if n_train == 0 {
        return Err(Error::InvalidParam("n_train must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for (c, entries) in ds.items.iter().enumerate() {
        if n_train > entries.len() {
            return Err(Error::InvalidParam(format!(
                "n_train = {n_train} exceeds class {:?} size {}",
                ds.classes[c],
                entries.len()
            )));
        }
        // Partial Fisher-Yates; explicit u64 draws keep the stream portable.
        let mut indices: Vec<usize> = (0..entries.len()).collect();
        for i in 0..n_train {
            let j = i + rng.random_range(0..(entries.len() - i) as u64) as usize;
            indices.swap(i, j);
        }
        let mut chosen: Vec<usize> = indices[..n_train].to_vec();
        chosen.sort_unstable();

        let item = |i: usize| EvalItem {
            class: c,
            image: entries[i].image.clone(),
            mask: entries[i].mask.clone(),
        };
        train.extend(chosen.iter().map(|&i| item(i)));
        match protocol {
            Protocol::Whole => eval.extend((0..entries.len()).map(item)),
            Protocol::Holdout => {
                let held: Vec<EvalItem> = (0..entries.len())
                    .filter(|i| !chosen.contains(i))
                    .map(item)
                    .collect();
                if held.is_empty() {
                    return Err(Error::InvalidParam(format!(
                        "holdout evaluation set for class {:?} is empty (n_train = class size)",
                        ds.classes[c]
                    )));
                }
                eval.extend(held);
            }
        }
    }
    Ok(Split {
        train,
        eval,
        protocol,
    })
}

/// Loads an item's image and its mask (all-foreground when absent).
pub fn load_item(item: &EvalItem) -> Result<(GrayImage, Mask)> {
    let image = imgio::load_pnm(&item.image)?;
    let mask = match &item.mask {
        Some(path) => imgio::load_mask(path, &image)?,
        None => imgio::full_mask(&image),
    };
    Ok((image, mask))
}

/// Classifies every item with `classify` and tallies true vs predicted.
/// Items whose classification errors out land in the `failed` tally instead
/// of aborting the run.
pub fn evaluate_with<E>(
    classes: &[String],
    items: &[EvalItem],
    mut classify: E,
) -> Result<ConfusionMatrix>
where
    E: FnMut(&EvalItem) -> Result<String>,
{
    let mut cm = ConfusionMatrix::new(classes);
    for item in items {
        if item.class >= classes.len() {
            return Err(Error::Dataset(format!(
                "item {} references class index {}",
                item.image.display(),
                item.class
            )));
        }
        match classify(item) {
            Ok(label) => {
                let pred = classes.iter().position(|c| *c == label).ok_or_else(|| {
                    Error::Dataset(format!("predicted label {label:?} is not a dataset class"))
                })?;
                cm.counts[item.class][pred] += 1;
            }
            Err(_) => cm.failed[item.class] += 1,
        }
    }
    Ok(cm)
}

/// Classifies every item through the model's own pipeline.
pub fn evaluate<F: Real>(
    model: &TrainedModel<F>,
    classes: &[String],
    items: &[EvalItem],
) -> Result<ConfusionMatrix> {
    for label in &model.classes {
        if !classes.contains(label) {
            return Err(Error::Dataset(format!(
                "model class {label:?} missing from the dataset classes"
            )));
        }
    }
    evaluate_with(classes, items, |item| {
        let (image, mask) = load_item(item)?;
        model.classify_image(&image, &mask).map(|v| v.label)
    })
}

/// Which synthetic corpus to generate: distinct silhouettes (the easy,
/// inter-class regime) or identical silhouettes where one class carries a
/// small high-contrast roof marker (the hard, intra-class regime).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticStyle {
    Inter,
    Intra,
}

impl fmt::Display for SyntheticStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticStyle::Inter => "inter",
            SyntheticStyle::Intra => "intra",
        })
    }
}

impl FromStr for SyntheticStyle {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "inter" => Ok(SyntheticStyle::Inter),
            "intra" => Ok(SyntheticStyle::Intra),
            other => Err(format!("unknown style {other:?}")),
        }
    }
}

const SYNTH_W: usize = 128;
const SYNTH_H: usize = 96;

/// Writes a two-class synthetic corpus under `out_dir` and reloads it as a
/// [`Dataset`]. Images are 128x96 PGM crops of a side-view "vehicle": a
/// filled body rectangle with a cab outline on top, randomly jittered in
/// position (+-4 px), size (+-10%), intensity (+-20) and dosed with uniform
/// noise of amplitude 8. Foreground silhouettes are emitted as `.mask.pgm`.
/// Identical seeds produce byte-identical files.
pub fn gen_synthetic(
    out_dir: impl AsRef<Path>,
    style: SyntheticStyle,
    n_per_class: usize,
    seed: u64,
) -> Result<Dataset> {
    let out_dir = out_dir.as_ref();
    if n_per_class == 0 {
        return Err(Error::InvalidParam("n_per_class must be >= 1".into()));
    }
    let classes: [&str; 2] = match style {
        SyntheticStyle::Inter => ["boxy", "rounded"],
        SyntheticStyle::Intra => ["sedan", "taxi"],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (c, class) in classes.iter().enumerate() {
        let dir = out_dir.join(class);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n_per_class {
            let canvas = render_vehicle(style, c, &mut rng);
            let image_path = dir.join(format!("{i:04}.pgm"));
            imgio::write_pgm(&canvas.image(), &image_path)?;
            imgio::write_pgm(&canvas.mask_image(), imgio::mask_path_for(&image_path))?;
        }
    }
    load_dataset(out_dir)
}

struct Canvas {
    img: Vec<u8>,
    mask: Vec<bool>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            img: vec![0; SYNTH_W * SYNTH_H],
            mask: vec![false; SYNTH_W * SYNTH_H],
        }
    }

    fn paint(&mut self, x: isize, y: isize, value: u8) {
        if (0..SYNTH_W as isize).contains(&x) && (0..SYNTH_H as isize).contains(&y) {
            let idx = y as usize * SYNTH_W + x as usize;
            self.img[idx] = value;
            self.mask[idx] = true;
        }
    }

    /// Trapezoid symmetric about `cx`: half-width `top_hw` at `y_top`,
    /// `bottom_hw` at `y_bottom`, filled by scanline.
    fn fill_trapezoid(
        &mut self,
        cx: f64,
        y_top: f64,
        y_bottom: f64,
        top_hw: f64,
        bottom_hw: f64,
        value: u8,
    ) {
        let (y0, y1) = (y_top.round() as isize, y_bottom.round() as isize);
        for y in y0..=y1 {
            let t = if y1 == y0 {
                0.0
            } else {
                (y - y0) as f64 / (y1 - y0) as f64
            };
            let hw = top_hw + (bottom_hw - top_hw) * t;
            let (x0, x1) = ((cx - hw).round() as isize, (cx + hw).round() as isize);
            for x in x0..=x1 {
                self.paint(x, y, value);
            }
        }
    }

    /// Rectangle filled with `cell_w` x `cell_h` tiles alternating between
    /// `bright` and `dark`; the tile grid is anchored at the rectangle
    /// origin.
    #[allow(clippy::too_many_arguments)]
    fn fill_pattern(
        &mut self,
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        cell_w: usize,
        cell_h: usize,
        bright: u8,
        dark: u8,
    ) {
        let (x0, x1) = (x0.round() as isize, x1.round() as isize);
        let (y0, y1) = (y0.round() as isize, y1.round() as isize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let parity =
                    ((x - x0) as usize / cell_w + (y - y0) as usize / cell_h) % 2;
                self.paint(x, y, if parity == 0 { bright } else { dark });
            }
        }
    }

    /// 2px-thick segment, painted by stepping 2x2 blocks along the line.
    fn stroke(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, value: u8) {
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            let px = (x0 + (x1 - x0) * t).floor() as isize;
            let py = (y0 + (y1 - y0) * t).floor() as isize;
            for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                self.paint(px + dx, py + dy, value);
            }
        }
    }

    fn add_noise(&mut self, rng: &mut ChaCha8Rng) {
        for v in &mut self.img {
            let noise = rng.random_range(0..17u64) as i32 - 8;
            *v = (*v as i32 + noise).clamp(0, 255) as u8;
        }
    }

    fn image(&self) -> GrayImage {
        GrayImage::new(SYNTH_W, SYNTH_H, self.img.clone())
    }

    fn mask_image(&self) -> GrayImage {
        GrayImage::new(
            SYNTH_W,
            SYNTH_H,
            self.mask.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
    }
}

/// Draws one jittered vehicle. Class 0 vs 1 differ by cab shape in the inter
/// style (rectangular vs trapezoidal outline) and by the roof marker in the
/// intra style (same trapezoidal cab for both).
fn render_vehicle(style: SyntheticStyle, class: usize, rng: &mut ChaCha8Rng) -> Canvas {
    let dx = rng.random_range(0..9u64) as f64 - 4.0;
    let dy = rng.random_range(0..9u64) as f64 - 4.0;
    let scale = 0.9 + rng.random::<f64>() * 0.2;
    let delta = rng.random_range(0..41u64) as i32 - 20;

    let shade = |base: i32| (base + delta).clamp(0, 255) as u8;
    let body_fill = shade(140);
    let cab_fill = shade(110);
    let outline = shade(235);
    let marker_fill = shade(255);

    // Geometry is anchored at the bottom-center of the body so scaling keeps
    // the vehicle on the "ground".
    let (ax, ay) = (64.0, 84.0);
    let sx = |x: f64| ax + (x - ax) * scale + dx;
    let sy = |y: f64| ay + (y - ay) * scale + dy;

    let boxy_cab = style == SyntheticStyle::Inter && class == 0;
    let cab_top_hw: f64 = if boxy_cab { 22.0 } else { 12.0 };
    let cab_bottom_hw: f64 = 22.0;

    let mut canvas = Canvas::new();
    // Body.
    canvas.fill_trapezoid(sx(64.0), sy(54.0), sy(84.0), 42.0 * scale, 42.0 * scale, body_fill);
    // Cab region.
    canvas.fill_trapezoid(
        sx(64.0),
        sy(34.0),
        sy(54.0),
        cab_top_hw * scale,
        cab_bottom_hw * scale,
        cab_fill,
    );
    // Cab outline: left side, roof line, right side.
    let (tl, tr) = (sx(64.0 - cab_top_hw), sx(64.0 + cab_top_hw));
    let (bl, br) = (sx(64.0 - cab_bottom_hw), sx(64.0 + cab_bottom_hw));
    let (top, bottom) = (sy(34.0), sy(54.0));
    canvas.stroke(bl, bottom, tl, top, outline);
    canvas.stroke(tl, top, tr, top, outline);
    canvas.stroke(tr, top, br, bottom, outline);

    // Roof marker: the taxi-sign analog. A checkered fill gives it local
    // structure that occurs nowhere else on the vehicle, so its descriptors
    // form clusters of their own instead of merging with corner clusters.
    // The sign has a fixed size and sits on even pixel coordinates: signs do
    // not shrink with the car, and the alignment keeps its local patterns
    // identical across images instead of splitting them into per-image
    // phase variants.
    if style == SyntheticStyle::Intra && class == 1 {
        let snap_even = |v: f64| (v / 2.0).round() * 2.0;
        let bottom = snap_even(sy(34.0));
        let left = snap_even(sx(64.0) - 10.0);
        canvas.fill_pattern(
            left,
            bottom - 11.0,
            left + 20.0,
            bottom,
            2,
            1000,
            marker_fill,
            shade(30),
        );
    }

    canvas.add_noise(rng);
    canvas
}
