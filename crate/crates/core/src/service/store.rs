//! Assignment state and the append-only record log behind the service.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotation::{AnnotationRecord, BehavioralLabel, EmotionalLabel, SampleInfo};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub samples_per_annotator: usize,
    pub target_annotations_per_sample: usize,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            samples_per_annotator: 100,
            target_annotations_per_sample: 6,
            seed: 42,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown annotator {0}")]
    UnknownAnnotator(String),
    #[error("unknown sample {0}")]
    UnknownSample(String),
    #[error("{annotator} already labeled {sample_id}")]
    Duplicate { annotator: String, sample_id: String },
    #[error("{sample_id} was not issued to {annotator}")]
    NotIssued { annotator: String, sample_id: String },
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("record log {path}: {message}")]
    Log { path: PathBuf, message: String },
}

type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Per-annotator queue: a seeded permutation of the pool.
#[derive(Debug, Clone, Serialize)]
pub struct AssignmentState {
    pub annotator_id: String,
    pub queue: Vec<usize>,
    pub completed: usize,
    #[serde(skip)]
    rank: Vec<usize>,
    #[serde(skip)]
    pending: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextSample {
    Assigned {
        sample_id: String,
        completed: usize,
        quota: usize,
    },
    Done {
        completed: usize,
        quota: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotators: BTreeMap<String, usize>,
    pub samples: BTreeMap<String, usize>,
    pub samples_at_target: usize,
    pub target: usize,
    pub records: usize,
}

/// Derives an annotator's shuffle seed from the session seed and their id.
pub fn annotator_seed(seed: u64, annotator_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(annotator_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn annotator_queue(seed: u64, annotator_id: &str, pool_len: usize) -> Vec<usize> {
    let mut q: Vec<usize> = (0..pool_len).collect();
    q.shuffle(&mut ChaCha8Rng::seed_from_u64(annotator_seed(seed, annotator_id)));
    q
}

pub struct Store {
    config: SessionConfig,
    pool: Vec<SampleInfo>,
    index: HashMap<String, usize>,
    states: BTreeMap<String, AssignmentState>,
    records: Vec<AnnotationRecord>,
    labeled: HashSet<(String, usize)>,
    counts: Vec<usize>,
    log_path: PathBuf,
    log: File,
    clock: Clock,
}

impl Store {
    /// Opens (or creates) the record log and replays it. A trailing line
    /// without a newline was never acknowledged and is dropped; repeated
    /// (annotator, sample) lines are ignored after the first.
    pub fn open(
        config: SessionConfig,
        pool: Vec<SampleInfo>,
        annotators: &[String],
        log_path: &Path,
    ) -> Result<Self, StoreError> {
        if config.samples_per_annotator == 0 || config.target_annotations_per_sample == 0 {
            return Err(StoreError::Config("counts must be positive".into()));
        }
        let mut index = HashMap::new();
        for (i, s) in pool.iter().enumerate() {
            if index.insert(s.sample_id.clone(), i).is_some() {
                return Err(StoreError::Config(format!("duplicate sample id {}", s.sample_id)));
            }
        }
        let log_err = |message: String| StoreError::Log {
            path: log_path.to_path_buf(),
            message,
        };
        if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| log_err(e.to_string()))?;
        }
        let mut log = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(log_path)
            .map_err(|e| log_err(e.to_string()))?;

        let mut states = BTreeMap::new();
        for a in annotators {
            let queue = annotator_queue(config.seed, a, pool.len());
            let mut rank = vec![0; pool.len()];
            for (pos, &s) in queue.iter().enumerate() {
                rank[s] = pos;
            }
            states.insert(
                a.clone(),
                AssignmentState {
                    annotator_id: a.clone(),
                    queue,
                    completed: 0,
                    rank,
                    pending: None,
                },
            );
        }

        let mut store = Store {
            counts: vec![0; pool.len()],
            config,
            pool,
            index,
            states,
            records: Vec::new(),
            labeled: HashSet::new(),
            log_path: log_path.to_path_buf(),
            log: log.try_clone().map_err(|e| log_err(e.to_string()))?,
            clock: Arc::new(Utc::now),
        };

        // replay
        log.seek(SeekFrom::Start(0)).map_err(|e| log_err(e.to_string()))?;
        let mut reader = BufReader::new(&log);
        let mut good_len: u64 = 0;
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            let n = reader.read_line(&mut line).map_err(|e| log_err(e.to_string()))?;
            if n == 0 {
                break;
            }
            lineno += 1;
            if !line.ends_with('\n') {
                log::warn!("{}: dropping unterminated final line", log_path.display());
                break;
            }
            good_len += n as u64;
            if line.trim().is_empty() {
                continue;
            }
            let rec: AnnotationRecord = serde_json::from_str(line.trim_end())
                .map_err(|e| log_err(format!("line {lineno}: {e}")))?;
            store.apply(rec);
        }
        drop(reader);
        let total = log.metadata().map_err(|e| log_err(e.to_string()))?.len();
        if total != good_len {
            log.set_len(good_len).map_err(|e| log_err(e.to_string()))?;
        }
        Ok(store)
    }

    /// Replaces the timestamp source; tests use a fixed clock.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Arc::new(clock);
        self
    }

    fn apply(&mut self, rec: AnnotationRecord) -> bool {
        let Some(&sample) = self.index.get(&rec.sample_id) else {
            log::warn!("record for sample {} outside the pool kept for export only", rec.sample_id);
            self.records.push(rec);
            return true;
        };
        if !self.labeled.insert((rec.annotator_id.clone(), sample)) {
            return false;
        }
        self.counts[sample] += 1;
        if let Some(st) = self.states.get_mut(&rec.annotator_id) {
            st.completed += 1;
            if st.pending == Some(sample) {
                st.pending = None;
            }
        }
        self.records.push(rec);
        true
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleInfo> {
        self.index.get(sample_id).map(|&i| &self.pool[i])
    }

    pub fn state(&self, annotator: &str) -> Option<&AssignmentState> {
        self.states.get(annotator)
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// The sample this annotator should label next. Repeated calls without a
    /// submission return the same sample. Among samples the annotator has not
    /// labeled, the one with the fewest collected plus outstanding
    /// annotations wins, ties going to the annotator's own queue order.
    pub fn next_sample(&mut self, annotator: &str) -> Result<NextSample, StoreError> {
        let quota = self.config.samples_per_annotator;
        let st = self
            .states
            .get(annotator)
            .ok_or_else(|| StoreError::UnknownAnnotator(annotator.to_string()))?;
        if st.completed >= quota {
            return Ok(NextSample::Done {
                completed: st.completed,
                quota,
            });
        }
        if let Some(p) = st.pending {
            return Ok(NextSample::Assigned {
                sample_id: self.pool[p].sample_id.clone(),
                completed: st.completed,
                quota,
            });
        }
        let mut outstanding = vec![0usize; self.pool.len()];
        for other in self.states.values() {
            if let Some(p) = other.pending {
                outstanding[p] += 1;
            }
        }
        let choice = st
            .queue
            .iter()
            .copied()
            .filter(|&s| !self.labeled.contains(&(annotator.to_string(), s)))
            .min_by_key(|&s| (self.counts[s] + outstanding[s], st.rank[s]));
        let completed = st.completed;
        match choice {
            None => Ok(NextSample::Done { completed, quota }),
            Some(s) => {
                self.states.get_mut(annotator).unwrap().pending = Some(s);
                Ok(NextSample::Assigned {
                    sample_id: self.pool[s].sample_id.clone(),
                    completed,
                    quota,
                })
            }
        }
    }

    /// Validates, appends to the log, syncs it to disk, and only then
    /// updates in-memory state.
    pub fn submit(
        &mut self,
        annotator: &str,
        sample_id: &str,
        behavioral: &str,
        emotional: &str,
    ) -> Result<AnnotationRecord, StoreError> {
        let st = self
            .states
            .get(annotator)
            .ok_or_else(|| StoreError::UnknownAnnotator(annotator.to_string()))?;
        let b: BehavioralLabel = behavioral
            .parse()
            .map_err(|_| StoreError::InvalidLabel(format!("behavioral {behavioral:?}")))?;
        let e: EmotionalLabel = emotional
            .parse()
            .map_err(|_| StoreError::InvalidLabel(format!("emotional {emotional:?}")))?;
        let &sample = self
            .index
            .get(sample_id)
            .ok_or_else(|| StoreError::UnknownSample(sample_id.to_string()))?;
        if self.labeled.contains(&(annotator.to_string(), sample)) {
            return Err(StoreError::Duplicate {
                annotator: annotator.to_string(),
                sample_id: sample_id.to_string(),
            });
        }
        if st.pending != Some(sample) {
            return Err(StoreError::NotIssued {
                annotator: annotator.to_string(),
                sample_id: sample_id.to_string(),
            });
        }
        let rec = AnnotationRecord::new(sample_id, annotator, b, e).at((self.clock)());
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let log_err = |e: std::io::Error| StoreError::Log {
            path: self.log_path.clone(),
            message: e.to_string(),
        };
        self.log.write_all(line.as_bytes()).map_err(log_err)?;
        self.log.sync_data().map_err(log_err)?;
        self.apply(rec.clone());
        Ok(rec)
    }

    /// All records ordered by sample, then timestamp, then annotator.
    pub fn export(&self) -> Vec<AnnotationRecord> {
        let mut out = self.records.clone();
        out.sort_by(|a, b| {
            (a.sample_id.as_str(), a.timestamp, a.annotator_id.as_str()).cmp(&(
                b.sample_id.as_str(),
                b.timestamp,
                b.annotator_id.as_str(),
            ))
        });
        out
    }

    pub fn progress(&self) -> Progress {
        let target = self.config.target_annotations_per_sample;
        Progress {
            annotators: self
                .states
                .iter()
                .map(|(k, v)| (k.clone(), v.completed))
                .collect(),
            samples: self
                .pool
                .iter()
                .zip(&self.counts)
                .map(|(s, &c)| (s.sample_id.clone(), c))
                .collect(),
            samples_at_target: self.counts.iter().filter(|&&c| c >= target).count(),
            target,
            records: self.records.len(),
        }
    }
}
