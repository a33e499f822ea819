//! Datasets, IDX ingestion and task-stream construction.

mod idx;
mod rotate;
mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use rotate::rotate_bilinear;
pub use synth::{synth_blobs, BlobConfig};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Labelled images stored as contiguous rows in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: [usize; 3],
    pixels: Vec<Real>,
    labels: Vec<u16>,
    classes: usize,
}

impl Dataset {
    pub fn new(
        shape: [usize; 3],
        pixels: Vec<Real>,
        labels: Vec<u16>,
        classes: usize,
    ) -> Result<Self> {
        let width: usize = shape.iter().product();
        if width == 0 || pixels.len() != width * labels.len() {
            return Err(Error::invalid(format!(
                "{} pixels do not form {} images of shape {shape:?}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
            return Err(Error::invalid(format!("label {bad} outside 0..{classes}")));
        }
        Ok(Dataset {
            shape,
            pixels,
            labels,
            classes,
        })
    }

    pub fn empty(shape: [usize; 3], classes: usize) -> Self {
        Dataset {
            shape,
            pixels: Vec::new(),
            labels: Vec::new(),
            classes,
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn image(&self, i: usize) -> &[Real] {
        let w = self.width();
        &self.pixels[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> u16 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn pixels(&self) -> &[Real] {
        &self.pixels
    }

    pub fn images(&self) -> Vec<&[Real]> {
        self.pixels.chunks(self.width()).collect()
    }

    pub fn push(&mut self, image: &[Real], label: u16) -> Result<()> {
        if image.len() != self.width() {
            return Err(Error::shape("dataset push", &[image.len()], &self.shape));
        }
        if label as usize >= self.classes {
            return Err(Error::invalid(format!(
                "label {label} outside 0..{}",
                self.classes
            )));
        }
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::empty(self.shape, self.classes);
        for &i in indices {
            out.pixels.extend_from_slice(self.image(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.shape != other.shape {
            return Err(Error::shape("dataset concat", &self.shape, &other.shape));
        }
        let mut out = self.clone();
        out.classes = self.classes.max(other.classes);
        out.pixels.extend_from_slice(&other.pixels);
        out.labels.extend_from_slice(&other.labels);
        Ok(out)
    }

    /// Batch tensor `[n, C, H, W]` of the given rows.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let rows: Vec<&[Real]> = indices.iter().map(|&i| self.image(i)).collect();
        Tensor::stack_rows(&rows, &self.shape).expect("rows share the dataset shape")
    }

    pub fn map_images(&self, mut f: impl FnMut(&[Real]) -> Vec<Real>) -> Dataset {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for img in self.pixels.chunks(self.width()) {
            pixels.extend(f(img));
        }
        Dataset {
            pixels,
            ..self.clone()
        }
    }
}

/// One step of a continual-learning sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: u16,
    pub train: Dataset,
    pub test: Dataset,
    /// Labels this task can emit.
    pub classes: Vec<u16>,
    /// Rotation applied to the task's images, in degrees.
    pub angle: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub classes: usize,
    pub shape: [usize; 3],
}

/// One incoming `(x, t, y)` triple.
#[derive(Clone, Copy, Debug)]
pub struct StreamItem<'a> {
    pub x: &'a [Real],
    pub task: u16,
    pub label: u16,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn total_examples(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }

    /// Training triples in presentation order: task by task, then by index.
    pub fn iter(&self) -> impl Iterator<Item = StreamItem<'_>> {
        self.tasks.iter().flat_map(|t| {
            (0..t.train.len()).map(move |i| StreamItem {
                x: t.train.image(i),
                task: t.id,
                label: t.train.label(i),
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AngleMode {
    /// `θ_t ~ Uniform[0°, 180°]`
    #[default]
    Random,
    /// `θ_t = 180° · t / T`
    Even,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotationConfig {
    pub tasks: usize,
    pub per_task: usize,
    /// Test images per task; the same base images are rotated for every task.
    pub test_per_task: usize,
    pub seed: u64,
    pub angles: AngleMode,
}

/// Builds a rotated-digits stream: task `t` rotates a disjoint subset of
/// `train` (and a shared subset of `test`) by its own angle.
pub fn make_rotations(train: &Dataset, test: &Dataset, cfg: &RotationConfig) -> Result<TaskStream> {
    if cfg.tasks == 0 {
        return Err(Error::invalid("need at least one task"));
    }
    if cfg.tasks > u16::MAX as usize {
        return Err(Error::invalid("too many tasks"));
    }
    let needed = cfg.tasks * cfg.per_task;
    if needed > train.len() {
        return Err(Error::invalid(format!(
            "{} tasks × {} examples need {needed} base images, only {} available",
            cfg.tasks,
            cfg.per_task,
            train.len()
        )));
    }
    if cfg.test_per_task > test.len() {
        return Err(Error::invalid(format!(
            "{} test images per task requested, only {} available",
            cfg.test_per_task,
            test.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let angles: Vec<f64> = (0..cfg.tasks)
        .map(|t| match cfg.angles {
            AngleMode::Random => rng.random_range(0.0..=180.0),
            AngleMode::Even => 180.0 * t as f64 / cfg.tasks as f64,
        })
        .collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let mut test_order: Vec<usize> = (0..test.len()).collect();
    test_order.shuffle(&mut rng);
    let test_base = test.subset(&test_order[..cfg.test_per_task]);
    let tasks = angles
        .iter()
        .enumerate()
        .map(|(t, &angle)| {
            let rot = |img: &[Real]| rotate_bilinear(img, train.shape(), angle);
            let idx = &order[t * cfg.per_task..(t + 1) * cfg.per_task];
            Task {
                id: t as u16,
                train: train.subset(idx).map_images(rot),
                test: test_base.map_images(rot),
                classes: (0..train.classes() as u16).collect(),
                angle: Some(angle),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        classes: train.classes(),
        shape: train.shape(),
    })
}

/// Splits the label set contiguously into `tasks` groups; the first
/// `classes mod tasks` groups take one extra class.
pub fn class_partition(classes: usize, tasks: usize) -> Result<Vec<Vec<u16>>> {
    if tasks == 0 || tasks > classes {
        return Err(Error::invalid(format!(
            "cannot split {classes} classes into {tasks} tasks"
        )));
    }
    let base = classes / tasks;
    let extra = classes % tasks;
    let mut next = 0u16;
    Ok((0..tasks)
        .map(|t| {
            let n = base + usize::from(t < extra);
            let group = (next..next + n as u16).collect();
            next += n as u16;
            group
        })
        .collect())
}

pub fn make_class_incremental(train: &Dataset, test: &Dataset, tasks: usize) -> Result<TaskStream> {
    let groups = class_partition(train.classes(), tasks)?;
    let split = |d: &Dataset, group: &[u16]| {
        let idx: Vec<usize> = (0..d.len())
            .filter(|&i| group.contains(&d.label(i)))
            .collect();
        d.subset(&idx)
    };
    Ok(TaskStream {
        tasks: groups
            .into_iter()
            .enumerate()
            .map(|(t, group)| Task {
                id: t as u16,
                train: split(train, &group),
                test: split(test, &group),
                classes: group,
                angle: None,
            })
            .collect(),
        classes: train.classes(),
        shape: train.shape(),
    })
}

/// MNIST-style IDX files in `dir` as `(train, test)`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(Dataset, Dataset)> {
    let dir = dir.as_ref();
    let train = load_idx(
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    let test = load_idx(
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok((train, test))
}

/// Dataset root from `SRM_DATA_DIR`, else `fallback`.
pub fn data_dir(fallback: impl AsRef<Path>) -> std::path::PathBuf {
    std::env::var_os("SRM_DATA_DIR")
        .map(Into::into)
        .unwrap_or_else(|| fallback.as_ref().to_path_buf())
}
