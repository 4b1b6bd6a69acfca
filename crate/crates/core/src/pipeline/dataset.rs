//! Dataset ingestion: directory-per-class image trees, the IDX format used
//! by the MNIST family, and a seeded synthetic two-color set for fast
//! end-to-end checks.

use crate::image::{resize_bilinear, Colorspace, Image};
use crate::{CoreError, Result};
use flate2::read::GzDecoder;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// `root/train/<class>/*.png|jpg` and `root/test/<class>/*`.
    Tree(PathBuf),
    /// Directory holding the four IDX files (optionally gzipped):
    /// `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`,
    /// `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte`.
    FashionMnist(PathBuf),
    /// Seeded solid-color squares, blue class vs red class.
    Synthetic {
        per_class_train: usize,
        per_class_test: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetDescriptor {
    pub source: DatasetSource,
    /// Side length every image is resized to.
    pub resize: usize,
    /// Cap on images loaded per class per split (0 = all), applied in
    /// deterministic file order.
    pub max_train_per_class: usize,
    pub max_test_per_class: usize,
}

impl DatasetDescriptor {
    pub fn new(source: DatasetSource, resize: usize) -> Self {
        DatasetDescriptor {
            source,
            resize,
            max_train_per_class: 0,
            max_test_per_class: 0,
        }
    }
}

/// In-memory dataset: per class, `(image_id, image)` pairs per split.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub class_names: Vec<String>,
    pub train: Vec<Vec<(String, Image)>>,
    pub test: Vec<Vec<(String, Image)>>,
}

impl LoadedDataset {
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|c| c == name)
    }

    fn validate(self) -> Result<Self> {
        if self.class_names.is_empty() {
            return Err(CoreError::Data("dataset has no classes".into()));
        }
        for (i, name) in self.class_names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(CoreError::Data(format!("class name {name:?} is empty or has whitespace")));
            }
            if self.train[i].is_empty() || self.test[i].is_empty() {
                return Err(CoreError::Data(format!("class {name:?} has an empty split")));
            }
        }
        Ok(self)
    }
}

pub fn load_dataset(desc: &DatasetDescriptor) -> Result<LoadedDataset> {
    if desc.resize < 8 {
        return Err(CoreError::Config(format!("resize {} below the 8-pixel minimum", desc.resize)));
    }
    let loaded = match &desc.source {
        DatasetSource::Tree(root) => load_tree(root, desc)?,
        DatasetSource::FashionMnist(dir) => load_fashion_mnist(dir, desc)?,
        DatasetSource::Synthetic {
            per_class_train,
            per_class_test,
            seed,
        } => synthetic_color_dataset(*per_class_train, *per_class_test, desc.resize, *seed)?,
    };
    loaded.validate()
}

/// Conventional locations for the IDX files: `$FMNIST_DIR`, then
/// `data/fashion-mnist` under the working directory.
pub fn fashion_mnist_dir() -> Option<PathBuf> {
    if let Ok(dir) = std::env::var("FMNIST_DIR") {
        let p = PathBuf::from(dir);
        if p.is_dir() {
            return Some(p);
        }
    }
    let p = PathBuf::from("data/fashion-mnist");
    if p.is_dir() {
        return Some(p);
    }
    None
}

fn cap(limit: usize) -> usize {
    if limit == 0 {
        usize::MAX
    } else {
        limit
    }
}

/// CSV-safe identifier: no commas, no whitespace.
fn sanitize_id(raw: &str) -> String {
    raw.chars()
        .map(|ch| if ch == ',' || ch.is_whitespace() { '_' } else { ch })
        .collect()
}

fn fit_size(img: Image, size: usize) -> Result<Image> {
    if img.height() == size && img.width() == size {
        Ok(img)
    } else {
        resize_bilinear(&img, size, size)
    }
}

// --- directory tree ---

fn load_tree(root: &Path, desc: &DatasetDescriptor) -> Result<LoadedDataset> {
    let train_dir = root.join("train");
    let test_dir = root.join("test");
    for d in [&train_dir, &test_dir] {
        if !d.is_dir() {
            return Err(CoreError::Data(format!("missing split directory {}", d.display())));
        }
    }
    let classes = list_class_dirs(&train_dir)?;
    if classes != list_class_dirs(&test_dir)? {
        return Err(CoreError::Data("train/ and test/ list different classes".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in &classes {
        train.push(load_class_dir(&train_dir.join(class), class, desc.resize, cap(desc.max_train_per_class))?);
        test.push(load_class_dir(&test_dir.join(class), class, desc.resize, cap(desc.max_test_per_class))?);
    }
    Ok(LoadedDataset {
        class_names: classes,
        train,
        test,
    })
}

fn list_class_dirs(split: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(split)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(CoreError::Data(format!("no class directories under {}", split.display())));
    }
    Ok(names)
}

fn load_class_dir(dir: &Path, class: &str, size: usize, limit: usize) -> Result<Vec<(String, Image)>> {
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .map(|e| e.to_string_lossy().to_lowercase())
            .unwrap_or_default();
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
            files.push(path);
        }
    }
    files.sort();
    let mut out = Vec::new();
    for path in files.into_iter().take(limit) {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let id = sanitize_id(&format!("{class}/{stem}"));
        out.push((id, fit_size(decode_image_file(&path)?, size)?));
    }
    if out.is_empty() {
        return Err(CoreError::Data(format!("no images under {}", dir.display())));
    }
    Ok(out)
}

/// Decode one raster file to an RGB image.
pub fn decode_image_file(path: &Path) -> Result<Image> {
    let decoded = image::open(path)
        .map_err(|e| CoreError::Data(format!("cannot decode {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let mut pixels = Array3::zeros((h, w, 3));
    for (x, y, px) in decoded.enumerate_pixels() {
        for ch in 0..3 {
            pixels[[y as usize, x as usize, ch]] = px.0[ch] as f64;
        }
    }
    Image::new(pixels, Colorspace::Rgb8)
}

/// Load one image file, or every raster file directly inside a directory in
/// sorted order. Ids are the sanitized file names; images keep their native
/// size (scoring resizes to the trained resolution on its own).
pub fn load_images_path(path: &Path) -> Result<Vec<(String, Image)>> {
    let mut files: Vec<PathBuf> = Vec::new();
    if path.is_file() {
        files.push(path.to_path_buf());
    } else if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            let p = entry?.path();
            let ext = p
                .extension()
                .map(|e| e.to_string_lossy().to_lowercase())
                .unwrap_or_default();
            if p.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
                files.push(p);
            }
        }
        files.sort();
    } else {
        return Err(CoreError::Data(format!("{} not found", path.display())));
    }
    let mut out = Vec::new();
    for file in files {
        let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
        out.push((sanitize_id(&name), decode_image_file(&file)?));
    }
    if out.is_empty() {
        return Err(CoreError::Data(format!("no images under {}", path.display())));
    }
    Ok(out)
}

// --- IDX (MNIST family) ---

fn open_maybe_gz(dir: &Path, base: &str) -> Result<Vec<u8>> {
    let plain = dir.join(base);
    let gz = dir.join(format!("{base}.gz"));
    let mut bytes = Vec::new();
    if plain.is_file() {
        File::open(&plain)?.read_to_end(&mut bytes)?;
    } else if gz.is_file() {
        GzDecoder::new(File::open(&gz)?).read_to_end(&mut bytes)?;
    } else {
        return Err(CoreError::Data(format!(
            "missing {base}[.gz] under {}",
            dir.display()
        )));
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| CoreError::Data("IDX file truncated".into()))
}

/// Parse an IDX image file: magic 0x00000803, then count, rows, cols,
/// then row-major u8 pixels.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Array3<f64>>> {
    if be_u32(bytes, 0)? != 0x0000_0803 {
        return Err(CoreError::Data("bad IDX image magic".into()));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() != need {
        return Err(CoreError::Data(format!(
            "IDX image payload is {} bytes, expected {need}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = 16 + i * rows * cols;
        let mut pixels = Array3::zeros((rows, cols, 3));
        for r in 0..rows {
            for ccol in 0..cols {
                let v = bytes[at + r * cols + ccol] as f64;
                for ch in 0..3 {
                    pixels[[r, ccol, ch]] = v;
                }
            }
        }
        out.push(pixels);
    }
    Ok(out)
}

/// Parse an IDX label file: magic 0x00000801, then count u8 labels.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    if be_u32(bytes, 0)? != 0x0000_0801 {
        return Err(CoreError::Data("bad IDX label magic".into()));
    }
    let count = be_u32(bytes, 4)? as usize;
    if bytes.len() != 8 + count {
        return Err(CoreError::Data(format!(
            "IDX label payload is {} bytes, expected {}",
            bytes.len(),
            8 + count
        )));
    }
    Ok(bytes[8..].to_vec())
}

fn load_idx_split(
    dir: &Path,
    prefix: &str,
    num_classes: usize,
    size: usize,
    limit: usize,
) -> Result<Vec<Vec<(String, Image)>>> {
    let images = parse_idx_images(&open_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = parse_idx_labels(&open_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    if images.len() != labels.len() {
        return Err(CoreError::Data(format!(
            "{prefix}: {} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let mut split: Vec<Vec<(String, Image)>> = vec![Vec::new(); num_classes];
    for (i, (pixels, label)) in images.into_iter().zip(labels).enumerate() {
        let label = label as usize;
        if label >= num_classes {
            return Err(CoreError::Data(format!("label {label} outside 0..{num_classes}")));
        }
        if split[label].len() >= limit {
            continue;
        }
        let img = fit_size(Image::new(pixels, Colorspace::Rgb8)?, size)?;
        split[label].push((format!("{prefix}-{i:05}"), img));
    }
    Ok(split)
}

fn load_fashion_mnist(dir: &Path, desc: &DatasetDescriptor) -> Result<LoadedDataset> {
    let num_classes = 10;
    let train = load_idx_split(dir, "train", num_classes, desc.resize, cap(desc.max_train_per_class))?;
    let test = load_idx_split(dir, "t10k", num_classes, desc.resize, cap(desc.max_test_per_class))?;
    Ok(LoadedDataset {
        class_names: (0..num_classes).map(|c| c.to_string()).collect(),
        train,
        test,
    })
}

// --- synthetic two-color set ---

/// Solid blue squares vs solid red squares with per-image color jitter and
/// per-pixel noise. Fully determined by `seed`.
pub fn synthetic_color_dataset(
    per_class_train: usize,
    per_class_test: usize,
    size: usize,
    seed: u64,
) -> Result<LoadedDataset> {
    if per_class_train == 0 || per_class_test == 0 {
        return Err(CoreError::Data("synthetic dataset needs at least one image per split".into()));
    }
    let bases: [(&str, [f64; 3]); 2] = [("blue", [50.0, 70.0, 200.0]), ("red", [200.0, 55.0, 50.0])];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (name, base) in bases {
        let mut make_split = |split: &str, count: usize| -> Vec<(String, Image)> {
            (0..count)
                .map(|i| {
                    let mut shade = base;
                    for ch in &mut shade {
                        *ch = (*ch + rng.gen_range(-25.0..=25.0)).clamp(0.0, 255.0);
                    }
                    let mut pixels = Array3::zeros((size, size, 3));
                    for r in 0..size {
                        for ccol in 0..size {
                            for ch in 0..3 {
                                pixels[[r, ccol, ch]] =
                                    (shade[ch] + rng.gen_range(-8.0..=8.0)).clamp(0.0, 255.0);
                            }
                        }
                    }
                    let img = Image::new(pixels, Colorspace::Rgb8).expect("finite by construction");
                    (format!("{name}-{split}-{i:03}"), img)
                })
                .collect()
        };
        train.push(make_split("train", per_class_train));
        test.push(make_split("test", per_class_test));
    }
    Ok(LoadedDataset {
        class_names: bases.iter().map(|(n, _)| n.to_string()).collect(),
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn synthetic_is_seed_deterministic_and_well_formed() {
        let a = synthetic_color_dataset(4, 3, 16, 9).unwrap();
        let b = synthetic_color_dataset(4, 3, 16, 9).unwrap();
        assert_eq!(a.class_names, vec!["blue", "red"]);
        assert_eq!(a.train[0].len(), 4);
        assert_eq!(a.test[1].len(), 3);
        for (x, y) in a.train.iter().flatten().zip(b.train.iter().flatten()) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.max_abs_diff(&y.1), 0.0);
        }
        let c = synthetic_color_dataset(4, 3, 16, 10).unwrap();
        assert!(a.train[0][0].1.max_abs_diff(&c.train[0][0].1) > 0.0);
        // Red images really are red-dominant, blue blue-dominant.
        let mean_ch = |img: &Image, ch: usize| {
            let mut s = 0.0;
            for r in 0..img.height() {
                for ccol in 0..img.width() {
                    s += img.pixels[[r, ccol, ch]];
                }
            }
            s / (img.height() * img.width()) as f64
        };
        assert!(mean_ch(&a.train[1][0].1, 0) > mean_ch(&a.train[1][0].1, 2));
        assert!(mean_ch(&a.train[0][0].1, 2) > mean_ch(&a.train[0][0].1, 0));
    }

    fn idx_image_bytes(images: &[[u8; 4]]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(0x0000_0803u32.to_be_bytes());
        b.extend((images.len() as u32).to_be_bytes());
        b.extend(2u32.to_be_bytes());
        b.extend(2u32.to_be_bytes());
        for img in images {
            b.extend(img);
        }
        b
    }

    fn idx_label_bytes(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(0x0000_0801u32.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn idx_parsers_round_trip_and_validate() {
        let imgs = idx_image_bytes(&[[0, 64, 128, 255], [9, 9, 9, 9]]);
        let parsed = parse_idx_images(&imgs).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0][[0, 1, 0]], 64.0);
        assert_eq!(parsed[0][[1, 1, 2]], 255.0); // grayscale replicated
        assert_eq!(parse_idx_labels(&idx_label_bytes(&[3, 1])).unwrap(), vec![3, 1]);

        let mut bad_magic = imgs.clone();
        bad_magic[3] = 0x01;
        assert!(parse_idx_images(&bad_magic).is_err());
        let truncated = &imgs[..imgs.len() - 1];
        assert!(parse_idx_images(truncated).is_err());
        assert!(parse_idx_labels(&idx_image_bytes(&[[0; 4]])).is_err());
    }

    #[test]
    fn fashion_mnist_loader_reads_gzipped_files_with_caps() {
        let dir = tempfile::tempdir().unwrap();
        // 6 train images: labels 0,0,0,1,1,0 -> cap 2 keeps first two per class.
        let train_imgs: Vec<[u8; 4]> = (0..6).map(|i| [i as u8 * 10; 4]).collect();
        let write_gz = |name: &str, payload: &[u8]| {
            let f = File::create(dir.path().join(name)).unwrap();
            let mut enc = flate2::write::GzEncoder::new(f, flate2::Compression::fast());
            enc.write_all(payload).unwrap();
            enc.finish().unwrap();
        };
        write_gz("train-images-idx3-ubyte.gz", &idx_image_bytes(&train_imgs));
        write_gz("train-labels-idx1-ubyte.gz", &idx_label_bytes(&[0, 0, 0, 1, 1, 0]));
        write_gz("t10k-images-idx3-ubyte.gz", &idx_image_bytes(&train_imgs[..4]));
        write_gz("t10k-labels-idx1-ubyte.gz", &idx_label_bytes(&[0, 1, 0, 1]));

        // Classes 2..9 are empty here, so full validation must reject it...
        let desc = DatasetDescriptor {
            source: DatasetSource::FashionMnist(dir.path().to_path_buf()),
            resize: 8,
            max_train_per_class: 2,
            max_test_per_class: 0,
        };
        assert!(load_dataset(&desc).is_err());
        // ...but the split loader itself applies caps in encounter order.
        let split = load_idx_split(dir.path(), "train", 10, 8, 2).unwrap();
        assert_eq!(split[0].len(), 2);
        assert_eq!(split[1].len(), 2);
        assert_eq!(split[0][0].0, "train-00000");
        assert_eq!(split[0][1].0, "train-00001");
        assert_eq!(split[0][0].1.height(), 8);
    }

    #[test]
    fn tree_loader_reads_classes_and_rejects_mismatched_splits() {
        let dir = tempfile::tempdir().unwrap();
        let put = |split: &str, class: &str, name: &str, shade: u8| {
            let d = dir.path().join(split).join(class);
            std::fs::create_dir_all(&d).unwrap();
            let img = image::RgbImage::from_pixel(10, 10, image::Rgb([shade, shade, shade]));
            img.save(d.join(name)).unwrap();
        };
        put("train", "apple", "a 1.png", 10);
        put("train", "banana", "b1.png", 200);
        put("test", "apple", "a2.png", 30);
        put("test", "banana", "b2.png", 220);
        let desc = DatasetDescriptor::new(DatasetSource::Tree(dir.path().to_path_buf()), 8);
        let data = load_dataset(&desc).unwrap();
        assert_eq!(data.class_names, vec!["apple", "banana"]);
        assert_eq!(data.train[0][0].0, "apple/a_1"); // sanitized id
        assert_eq!(data.train[0][0].1.height(), 8);
        assert!((data.train[1][0].1.pixels[[0, 0, 0]] - 200.0).abs() < 1.5);

        std::fs::create_dir_all(dir.path().join("test/cherry")).unwrap();
        assert!(load_dataset(&desc).is_err()); // class sets differ
    }

    #[test]
    fn empty_class_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("train/only")).unwrap();
        std::fs::create_dir_all(dir.path().join("test/only")).unwrap();
        let desc = DatasetDescriptor::new(DatasetSource::Tree(dir.path().to_path_buf()), 8);
        assert!(matches!(load_dataset(&desc), Err(CoreError::Data(_))));
    }
}
