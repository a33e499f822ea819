//! Bounded episodic store of packed latent codes.
//!
//! Storage accounting counts code bits only; labels and task ids are
//! bookkeeping and are excluded from `bits_used`.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::codec;
use crate::error::{Error, Result};
use crate::vae::{pack, unpack, CodeGeometry, LatentCode, PackedCode};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BufferItem {
    pub code: PackedCode,
    pub label: u16,
    pub task: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvictionPolicy {
    /// Uniform reservoir over everything seen so far.
    Reservoir,
    /// `⌊L/T⌋` FIFO slots per task; the `L mod T` leftover slots go to the
    /// earliest tasks.
    PerTaskRecent { tasks: usize },
}

impl EvictionPolicy {
    fn code(self) -> u32 {
        match self {
            EvictionPolicy::Reservoir => 0,
            EvictionPolicy::PerTaskRecent { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Slots {
    Flat(Vec<BufferItem>),
    PerTask(Vec<VecDeque<BufferItem>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexBuffer {
    geometry: CodeGeometry,
    capacity: usize,
    seen: u64,
    policy: EvictionPolicy,
    slots: Slots,
}

/// Result of [`IndexBuffer::sample`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledBatch {
    pub items: Vec<BufferItem>,
    /// Set when a nonzero batch was requested from an empty buffer.
    pub buffer_empty: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StorageReport {
    pub bits_used: u64,
    pub items: usize,
    pub effective_examples: f64,
}

impl IndexBuffer {
    pub fn new(geometry: CodeGeometry, capacity: usize, policy: EvictionPolicy) -> Result<Self> {
        let slots = match policy {
            EvictionPolicy::Reservoir => Slots::Flat(Vec::new()),
            EvictionPolicy::PerTaskRecent { tasks } => {
                if tasks == 0 || tasks > u16::MAX as usize + 1 {
                    return Err(Error::invalid(format!(
                        "per-task policy needs 1..=65536 tasks, got {tasks}"
                    )));
                }
                Slots::PerTask(vec![VecDeque::new(); tasks])
            }
        };
        if capacity > u32::MAX as usize {
            return Err(Error::invalid("capacity does not fit in 32 bits"));
        }
        Ok(IndexBuffer {
            geometry,
            capacity,
            seen: 0,
            policy,
            slots,
        })
    }

    pub fn reservoir(geometry: CodeGeometry, capacity: usize) -> Result<Self> {
        Self::new(geometry, capacity, EvictionPolicy::Reservoir)
    }

    pub fn per_task(geometry: CodeGeometry, capacity: usize, tasks: usize) -> Result<Self> {
        Self::new(geometry, capacity, EvictionPolicy::PerTaskRecent { tasks })
    }

    pub fn geometry(&self) -> CodeGeometry {
        self.geometry
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn policy(&self) -> EvictionPolicy {
        self.policy
    }

    /// Number of inserts so far, including those that were not retained.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        match &self.slots {
            Slots::Flat(v) => v.len(),
            Slots::PerTask(q) => q.iter().map(VecDeque::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slots reserved for `task` under the per-task policy.
    pub fn task_quota(&self, task: usize) -> usize {
        match self.policy {
            EvictionPolicy::Reservoir => self.capacity,
            EvictionPolicy::PerTaskRecent { tasks } => {
                if task >= tasks {
                    return 0;
                }
                self.capacity / tasks + usize::from(task < self.capacity % tasks)
            }
        }
    }

    pub fn get(&self, index: usize) -> Option<&BufferItem> {
        match &self.slots {
            Slots::Flat(v) => v.get(index),
            Slots::PerTask(queues) => {
                let mut i = index;
                for q in queues {
                    if i < q.len() {
                        return q.get(i);
                    }
                    i -= q.len();
                }
                None
            }
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = &BufferItem> + '_> {
        match &self.slots {
            Slots::Flat(v) => Box::new(v.iter()),
            Slots::PerTask(q) => Box::new(q.iter().flatten()),
        }
    }

    /// Items stored for one task, oldest first under the per-task policy.
    pub fn task_items(&self, task: u16) -> Vec<&BufferItem> {
        match &self.slots {
            Slots::PerTask(q) => q
                .get(task as usize)
                .map(|d| d.iter().collect())
                .unwrap_or_default(),
            Slots::Flat(v) => v.iter().filter(|it| it.task == task).collect(),
        }
    }

    fn check_code(&self, code: &PackedCode) -> Result<()> {
        if code.bytes().len() != self.geometry.byte_len() {
            return Err(Error::Geometry {
                expected_c: self.geometry.latents,
                expected_l: self.geometry.categories,
                c: code.bytes().len() * 8,
                l: 0,
            });
        }
        unpack(code, self.geometry).map(|_| ())
    }

    pub fn insert<R: Rng + ?Sized>(&mut self, item: BufferItem, rng: &mut R) -> Result<()> {
        self.check_code(&item.code)?;
        let quota = self.task_quota(item.task as usize);
        let n = self.seen;
        match &mut self.slots {
            Slots::Flat(v) => {
                if (n as usize) < self.capacity {
                    v.push(item);
                } else if self.capacity > 0 {
                    let j = rng.random_range(0..=n);
                    if (j as usize) < self.capacity {
                        v[j as usize] = item;
                    }
                }
            }
            Slots::PerTask(queues) => {
                let tasks = queues.len();
                let Some(q) = queues.get_mut(item.task as usize) else {
                    return Err(Error::invalid(format!(
                        "task {} outside 0..{tasks}",
                        item.task
                    )));
                };
                if quota > 0 {
                    if q.len() == quota {
                        q.pop_front();
                    }
                    q.push_back(item);
                }
            }
        }
        self.seen += 1;
        Ok(())
    }

    pub fn insert_code<R: Rng + ?Sized>(
        &mut self,
        code: &LatentCode,
        label: u16,
        task: u16,
        rng: &mut R,
    ) -> Result<()> {
        let code = pack(code, self.geometry)?;
        self.insert(BufferItem { code, label, task }, rng)
    }

    /// Uniform draws with replacement over the current items.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> SampledBatch {
        let len = self.len();
        if batch == 0 {
            return SampledBatch::default();
        }
        if len == 0 {
            log::warn!("sampling {batch} items from an empty buffer");
            return SampledBatch {
                items: Vec::new(),
                buffer_empty: true,
            };
        }
        let items = (0..batch)
            .map(|_| {
                self.get(rng.random_range(0..len))
                    .expect("index in range")
                    .clone()
            })
            .collect();
        SampledBatch {
            items,
            buffer_empty: false,
        }
    }

    pub fn storage_report(&self, input_bits_per_example: u64) -> Result<StorageReport> {
        if input_bits_per_example == 0 {
            return Err(Error::invalid("input_bits_per_example must be > 0"));
        }
        let items = self.len();
        let bits_used = items as u64 * self.geometry.code_bits() as u64;
        Ok(StorageReport {
            bits_used,
            items,
            effective_examples: bits_used as f64 / input_bits_per_example as f64,
        })
    }
}

const BUFFER_MAGIC: &[u8; 4] = b"SRMB";
const BUFFER_VERSION: u16 = 1;

impl IndexBuffer {
    /// Header: magic, version, then u32 `c, l, k, L, count, policy`,
    /// followed by u32 task count and u64 seen count; then `count` records
    /// of code bytes, u16 label, u16 task. Per-task buffers are written
    /// task by task, oldest first.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let g = self.geometry;
        w.write_all(BUFFER_MAGIC)?;
        codec::write_u16(w, BUFFER_VERSION)?;
        for v in [
            g.latents,
            g.categories,
            g.code_bits(),
            self.capacity,
            self.len(),
        ] {
            codec::write_u32(w, v as u32)?;
        }
        codec::write_u32(w, self.policy.code())?;
        let tasks = match self.policy {
            EvictionPolicy::Reservoir => 0,
            EvictionPolicy::PerTaskRecent { tasks } => tasks,
        };
        codec::write_u32(w, tasks as u32)?;
        codec::write_u64(w, self.seen)?;
        for item in self.iter() {
            w.write_all(item.code.bytes())?;
            codec::write_u16(w, item.label)?;
            codec::write_u16(w, item.task)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        codec::expect_magic(r, BUFFER_MAGIC)?;
        codec::expect_version(r, BUFFER_VERSION)?;
        let c = codec::read_u32(r, "c")? as usize;
        let l = codec::read_u32(r, "l")? as usize;
        let k = codec::read_u32(r, "k")? as usize;
        let capacity = codec::read_u32(r, "capacity")? as usize;
        let count = codec::read_u32(r, "count")? as usize;
        let policy_code = codec::read_u32(r, "policy")?;
        let tasks = codec::read_u32(r, "task count")? as usize;
        let seen = codec::read_u64(r, "seen count")?;
        let geometry = CodeGeometry::new(c, l).map_err(|e| Error::Format(e.to_string()))?;
        if geometry.code_bits() != k {
            return Err(Error::Format(format!("k={k} does not match c={c}, l={l}")));
        }
        let policy = match policy_code {
            0 => EvictionPolicy::Reservoir,
            1 => EvictionPolicy::PerTaskRecent { tasks },
            other => return Err(Error::Format(format!("unknown policy {other}"))),
        };
        if count > capacity || count as u64 > seen {
            return Err(Error::Format(format!(
                "{count} items exceed capacity {capacity} or seen count {seen}"
            )));
        }
        let mut buf = IndexBuffer::new(geometry, capacity, policy)
            .map_err(|e| Error::Format(e.to_string()))?;
        let width = geometry.byte_len();
        for _ in 0..count {
            let mut bytes = vec![0u8; width];
            r.read_exact(&mut bytes)
                .map_err(|e| codec::truncated(e, "code record"))?;
            let code = PackedCode::from_bytes(bytes);
            unpack(&code, geometry)?;
            let label = codec::read_u16(r, "label")?;
            let task = codec::read_u16(r, "task")?;
            let item = BufferItem { code, label, task };
            let quota = buf.task_quota(task as usize);
            match &mut buf.slots {
                Slots::Flat(v) => v.push(item),
                Slots::PerTask(q) => {
                    let Some(d) = q.get_mut(task as usize) else {
                        return Err(Error::Format(format!("task {task} outside 0..{tasks}")));
                    };
                    if d.len() == quota {
                        return Err(Error::Format(format!(
                            "task {task} exceeds its quota {quota}"
                        )));
                    }
                    d.push_back(item);
                }
            }
        }
        codec::expect_eof(r)?;
        buf.seen = seen;
        Ok(buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
