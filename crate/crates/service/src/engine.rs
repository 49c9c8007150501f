//! Session store over a set of read-only dataset indexes.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use whittle_core::active::LikelihoodKind;
use whittle_core::hybrid::DEFAULT_PAIR_CAP;
use whittle_core::{ImageId, SearchIndex, TrainConfig};

use crate::error::{Result, ServiceError};
use crate::session::{
    FeedbackRequest, KeywordPredicate, Mode, Page, PageRequest, QuestionView, Session, SessionRecord,
    SessionSettings,
};

pub const DEFAULT_PAGE_SIZE: usize = 40;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Sessions idle longer than this are dropped.
    pub ttl: Duration,
    pub page_size: usize,
    pub likelihood: LikelihoodKind,
    pub pair_cap: usize,
    pub train: TrainConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            ttl: Duration::from_secs(3600),
            page_size: DEFAULT_PAGE_SIZE,
            likelihood: LikelihoodKind::MostRelevant,
            pair_cap: DEFAULT_PAIR_CAP,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset: String,
    pub mode: Mode,
    #[serde(default)]
    pub keyword_filter: Vec<KeywordPredicate>,
    /// Drawn at random when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub page_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub page: Page,
    pub question: Option<QuestionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    pub page: Page,
    pub question: Option<QuestionView>,
    /// Relevance entropy in bits.
    pub entropy: f64,
    pub iteration: usize,
    pub exhausted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub attribute_names: Vec<String>,
}

type SessionSlot = Arc<Mutex<Session>>;

pub struct Engine {
    datasets: BTreeMap<String, Arc<SearchIndex>>,
    sessions: RwLock<HashMap<String, SessionSlot>>,
    config: EngineConfig,
}

fn lock(slot: &SessionSlot) -> MutexGuard<'_, Session> {
    slot.lock().unwrap_or_else(|e| e.into_inner())
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        Self {
            datasets: BTreeMap::new(),
            sessions: RwLock::new(HashMap::new()),
            config,
        }
    }

    /// Registers `index` under its own name, replacing any previous one.
    pub fn with_dataset(mut self, index: SearchIndex) -> Self {
        self.datasets.insert(index.name.clone(), Arc::new(index));
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.datasets
            .values()
            .map(|ix| DatasetInfo {
                name: ix.name.clone(),
                n: ix.n(),
                m: ix.m(),
                attribute_names: ix.attribute_names.clone(),
            })
            .collect()
    }

    pub fn dataset(&self, name: &str) -> Result<&Arc<SearchIndex>> {
        self.datasets
            .get(name)
            .ok_or_else(|| ServiceError::UnknownDataset(name.to_string()))
    }

    fn settings(&self) -> SessionSettings {
        SessionSettings {
            likelihood: self.config.likelihood,
            pair_cap: self.config.pair_cap,
            train: self.config.train,
        }
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    fn insert(&self, session: Session) -> SessionSlot {
        let id = session.id.clone();
        let slot = Arc::new(Mutex::new(session));
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id, slot.clone());
        slot
    }

    /// Looks up a live session, dropping it when its idle time ran out.
    fn slot(&self, id: &str) -> Result<SessionSlot> {
        let slot = self
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.to_string()))?;
        let expired = lock(&slot).last_used.elapsed() > self.config.ttl;
        if expired {
            self.sessions
                .write()
                .unwrap_or_else(|e| e.into_inner())
                .remove(id);
            return Err(ServiceError::UnknownSession(id.to_string()));
        }
        Ok(slot)
    }

    fn page_request(&self, page: Option<usize>, page_size: Option<usize>) -> PageRequest {
        PageRequest {
            page: page.unwrap_or(0),
            page_size: page_size.unwrap_or(self.config.page_size),
        }
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionCreated> {
        self.evict_expired();
        let index = self.dataset(&req.dataset)?.clone();
        let seed = req
            .seed
            .unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut session = Session::new(
            id.clone(),
            req.dataset,
            index,
            req.mode,
            seed,
            req.keyword_filter,
            self.settings(),
        )?;
        let page = session.page(self.page_request(None, req.page_size))?;
        let question = session.question();
        self.insert(session);
        tracing::debug!(session = %id, mode = ?req.mode, "session created");
        Ok(SessionCreated {
            session_id: id,
            mode: req.mode,
            seed,
            page,
            question,
        })
    }

    /// Applies one round of feedback. Calls for the same session are
    /// serialized; different sessions proceed in parallel.
    pub fn submit_feedback(&self, id: &str, req: &FeedbackRequest) -> Result<FeedbackOutcome> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        s.last_used = Instant::now();
        s.submit(req)?;
        let page = s.page(self.page_request(req.page, req.page_size))?;
        Ok(FeedbackOutcome {
            page,
            question: s.question(),
            entropy: s.entropy(),
            iteration: s.iteration(),
            exhausted: s.is_exhausted(),
        })
    }

    pub fn results(&self, id: &str, req: PageRequest) -> Result<Page> {
        let slot = self.slot(id)?;
        let mut s = lock(&slot);
        s.last_used = Instant::now();
        s.page(req)
    }

    pub fn results_with_defaults(&self, id: &str, page: Option<usize>, page_size: Option<usize>) -> Result<Page> {
        self.results(id, self.page_request(page, page_size))
    }

    /// Full current ranking of a session.
    pub fn ranking(&self, id: &str) -> Result<Vec<ImageId>> {
        let slot = self.slot(id)?;
        let s = lock(&slot);
        Ok(s.ranking().to_vec())
    }

    pub fn question(&self, id: &str) -> Result<Option<QuestionView>> {
        let slot = self.slot(id)?;
        let s = lock(&slot);
        Ok(s.question())
    }

    pub fn export(&self, id: &str) -> Result<SessionRecord> {
        let slot = self.slot(id)?;
        let s = lock(&slot);
        Ok(s.record())
    }

    /// Recreates a session from its record under the recorded id.
    pub fn restore(&self, record: SessionRecord) -> Result<String> {
        let index = self.dataset(&record.dataset)?.clone();
        let session = Session::restore(index, record, self.settings())?;
        let id = session.id.clone();
        self.insert(session);
        Ok(id)
    }

    pub fn remove(&self, id: &str) -> bool {
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .remove(id)
            .is_some()
    }

    /// Drops every session idle longer than the TTL; returns how many.
    pub fn evict_expired(&self) -> usize {
        let ttl = self.config.ttl;
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let before = map.len();
        map.retain(|_, slot| match slot.try_lock() {
            Ok(s) => s.last_used.elapsed() <= ttl,
            // Busy sessions are in use, hence not idle.
            Err(_) => true,
        });
        before - map.len()
    }

    /// Asset path of an image, as recorded in the dataset.
    pub fn asset_path(&self, dataset: &str, id: ImageId) -> Result<String> {
        let index = self.dataset(dataset)?;
        index
            .asset_paths
            .get(id)
            .ok_or(ServiceError::UnknownImage(id))?
            .clone()
            .ok_or(ServiceError::NoAsset(id))
    }
}
