//! Optional log of every environment draw an agent consumed, used to check
//! that all agents of a run faced the same environment.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::env::{context_hash, hash_values, ContextSource, RoundNoise};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::meta::InstanceSource;
use crate::types::{AgentKind, BanditInstance, RoundContexts};
use crate::variants::polyhedron::{Polyhedron, PolyhedronSource};
use crate::variants::sequential::{SequentialContexts, SequentialSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvField {
    Instance,
    Contexts,
    RewardNoise,
    PosteriorNormals,
}

impl EnvField {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvField::Instance => "instance",
            EnvField::Contexts => "contexts",
            EnvField::RewardNoise => "reward_noise",
            EnvField::PosteriorNormals => "posterior_normals",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EnvRow {
    pub run: usize,
    pub agent: AgentKind,
    pub task: usize,
    /// 0 for per-task draws.
    pub round: usize,
    pub field: EnvField,
    pub hash: u64,
}

#[derive(Debug, Default)]
pub struct EnvRecorder {
    events: Mutex<Vec<(usize, usize, EnvField, u64)>>,
}

impl EnvRecorder {
    fn push(&self, task: usize, round: usize, field: EnvField, hash: u64) {
        self.events
            .lock()
            .expect("recorder lock")
            .push((task, round, field, hash));
    }

    pub fn into_rows(self, run: usize, agent: AgentKind) -> Vec<EnvRow> {
        self.events
            .into_inner()
            .expect("recorder lock")
            .into_iter()
            .map(|(task, round, field, hash)| EnvRow {
                run,
                agent,
                task,
                round,
                field,
                hash,
            })
            .collect()
    }
}

/// Forwards to `inner`, logging what it hands out when a recorder is set.
pub struct Recorded<'a, S: ?Sized> {
    pub inner: &'a S,
    pub log: Option<&'a EnvRecorder>,
}

impl<S: ContextSource + ?Sized> ContextSource for Recorded<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn contexts(&self, task: usize, round: usize) -> Result<RoundContexts> {
        let c = self.inner.contexts(task, round)?;
        if let Some(log) = self.log {
            log.push(task, round, EnvField::Contexts, context_hash(c.vectors()));
        }
        Ok(c)
    }
}

impl<S: PolyhedronSource + ?Sized> PolyhedronSource for Recorded<'_, S> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn polyhedron(&self, task: usize, round: usize) -> Result<Polyhedron> {
        let p = self.inner.polyhedron(task, round)?;
        if let Some(log) = self.log {
            let values = p.a().iter().chain(p.b().iter()).copied();
            log.push(task, round, EnvField::Contexts, hash_values(values));
        }
        Ok(p)
    }
}

impl<S: SequentialSource + ?Sized> SequentialSource for Recorded<'_, S> {
    fn contexts(&self, task: usize, round: usize) -> Result<SequentialContexts> {
        let c = self.inner.contexts(task, round)?;
        if let Some(log) = self.log {
            let values = c.per_bandit.iter().flatten().flat_map(|v| v.iter().copied());
            log.push(task, round, EnvField::Contexts, hash_values(values));
        }
        Ok(c)
    }
}

impl<S: InstanceSource + ?Sized> InstanceSource for Recorded<'_, S> {
    fn instance(&self, task: usize) -> BanditInstance {
        let inst = self.inner.instance(task);
        if let Some(log) = self.log {
            log.push(task, 0, EnvField::Instance, hash_values(inst.mu.iter().copied()));
        }
        inst
    }
}

pub struct RecordedNoise<'a> {
    pub inner: &'a mut dyn RoundNoise,
    pub log: Option<&'a EnvRecorder>,
}

impl RoundNoise for RecordedNoise<'_> {
    fn reward_noise(&mut self, task: usize, round: usize) -> f64 {
        let x = self.inner.reward_noise(task, round);
        if let Some(log) = self.log {
            log.push(task, round, EnvField::RewardNoise, hash_values([x]));
        }
        x
    }

    fn posterior_normals(&mut self, task: usize, round: usize, d: usize) -> Vector {
        let z = self.inner.posterior_normals(task, round, d);
        if let Some(log) = self.log {
            log.push(task, round, EnvField::PosteriorNormals, hash_values(z.iter().copied()));
        }
        z
    }
}

/// Checks that every `(run, task, round, field)` carries one hash across agents.
pub fn check_pairing(rows: &[EnvRow]) -> Result<()> {
    let mut seen: BTreeMap<(usize, usize, usize, EnvField), (u64, AgentKind)> = BTreeMap::new();
    for r in rows {
        let key = (r.run, r.task, r.round, r.field);
        match seen.get(&key) {
            Some(&(h, first)) if h != r.hash => {
                return Err(Error::Precondition(format!(
                    "{} differs between {first} and {} at run {} task {} round {}",
                    r.field.as_str(),
                    r.agent,
                    r.run,
                    r.task,
                    r.round
                )));
            }
            Some(_) => {}
            None => {
                seen.insert(key, (r.hash, r.agent));
            }
        }
    }
    Ok(())
}
