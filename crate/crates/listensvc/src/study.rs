//! In-memory state of one study: screens, assignments and responses.
//!
//! Every mutation goes through a `check_*` / `apply_*` pair so the service
//! can validate, journal, then apply without holding a write lock across
//! the durable append.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::StudyError;
use crate::model::{
    Assignment, ListenerMetadata, NextScreen, Payload, Response, Screen, ScreenView, SlotView,
    StudyConfig,
};

/// Prefix of stimulus URLs handed to listeners.
pub const AUDIO_ROUTE: &str = "/audio/";

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Opaque stimulus id; does not reveal the file name or system.
pub fn stimulus_token(study_id: &str, seed: u64, stimulus_ref: &str) -> String {
    let digest = Sha256::digest(format!("{study_id}\u{0}{seed}\u{0}{stimulus_ref}").as_bytes());
    hex::encode(&digest[..16])
}

/// Deterministic opaque listener token for registrations without an id.
pub fn listener_token(study_id: &str, seed: u64, index: usize) -> String {
    let digest = Sha256::digest(format!("listener\u{0}{study_id}\u{0}{seed}\u{0}{index}").as_bytes());
    format!("L{}", hex::encode(&digest[..8]))
}

/// Largest-remainder apportionment of `n` slots over category sizes.
///
/// When `n` is at least the number of categories every category receives
/// one slot, taken from the category furthest above its exact share.
pub fn apportion(sizes: &[usize], n: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    if total == 0 || sizes.is_empty() {
        return vec![0; sizes.len()];
    }
    let exact: Vec<f64> = sizes.iter().map(|&s| n as f64 * s as f64 / total as f64).collect();
    let mut quota: Vec<usize> = sizes.iter().map(|&s| n * s / total).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // remainders compared exactly as (n * s) mod total
    order.sort_by(|&a, &b| {
        let ra = (n * sizes[a]) % total;
        let rb = (n * sizes[b]) % total;
        rb.cmp(&ra).then(a.cmp(&b))
    });
    let missing = n.min(total) - quota.iter().sum::<usize>();
    for &c in order.iter().take(missing) {
        quota[c] += 1;
    }
    if n >= sizes.len() {
        for c in 0..sizes.len() {
            if quota[c] == 0 && sizes[c] > 0 {
                let donor = (0..sizes.len())
                    .filter(|&d| quota[d] > 1)
                    .max_by(|&a, &b| {
                        let sa = quota[a] as f64 - exact[a];
                        let sb = quota[b] as f64 - exact[b];
                        sa.total_cmp(&sb).then(b.cmp(&a))
                    });
                if let Some(d) = donor {
                    quota[d] -= 1;
                    quota[c] += 1;
                }
            }
        }
    }
    quota
}

#[derive(Debug, Clone)]
struct ListenerState {
    metadata: ListenerMetadata,
    assignment: Assignment,
    answered: HashSet<usize>,
}

/// Registration accepted by [`Study::plan_registration`], ready to journal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub listener_id: String,
    pub metadata: ListenerMetadata,
    pub screens: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Study {
    id: String,
    config: StudyConfig,
    screens: Vec<Screen>,
    screen_index: HashMap<String, usize>,
    closed: bool,
    listener_order: Vec<String>,
    listeners: HashMap<String, ListenerState>,
    responses: Vec<Response>,
    rating_counts: Vec<usize>,
    assigned_counts: Vec<usize>,
    stimuli: HashMap<String, String>,
}

impl Study {
    pub fn new(id: &str, screens: Vec<Screen>, config: StudyConfig) -> Result<Self, StudyError> {
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(StudyError::BadRequest(format!(
                "study id {id:?} must be non-empty ASCII letters, digits, '-' or '_'"
            )));
        }
        if config.screens_per_listener == 0 {
            return Err(StudyError::InvalidConfig("screens_per_listener must be positive".into()));
        }
        if config.min_ratings_per_screen == 0 {
            return Err(StudyError::InvalidConfig("min_ratings_per_screen must be positive".into()));
        }
        if screens.is_empty() {
            return Err(StudyError::InvalidConfig("study has no screens".into()));
        }
        let mut screen_index = HashMap::with_capacity(screens.len());
        let mut stimuli = HashMap::new();
        for (i, s) in screens.iter().enumerate() {
            s.validate()?;
            if screen_index.insert(s.id.clone(), i).is_some() {
                return Err(StudyError::DuplicateScreen(s.id.clone()));
            }
            for r in &s.stimulus_refs {
                stimuli.insert(stimulus_token(id, config.rng_seed, r), r.clone());
            }
        }
        let n = screens.len();
        Ok(Self {
            id: id.to_string(),
            config,
            screens,
            screen_index,
            closed: false,
            listener_order: Vec::new(),
            listeners: HashMap::new(),
            responses: Vec::new(),
            rating_counts: vec![0; n],
            assigned_counts: vec![0; n],
            stimuli,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &StudyConfig {
        &self.config
    }

    pub fn screens(&self) -> &[Screen] {
        &self.screens
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn responses(&self) -> &[Response] {
        &self.responses
    }

    pub fn listener_count(&self) -> usize {
        self.listener_order.len()
    }

    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screen_index.get(id).map(|&i| &self.screens[i])
    }

    /// Responses received per screen id.
    pub fn rating_counts(&self) -> BTreeMap<String, usize> {
        self.screens
            .iter()
            .zip(&self.rating_counts)
            .map(|(s, &c)| (s.id.clone(), c))
            .collect()
    }

    pub fn assignment(&self, listener_id: &str) -> Result<&Assignment, StudyError> {
        self.listeners
            .get(listener_id)
            .map(|l| &l.assignment)
            .ok_or_else(|| StudyError::UnknownListener(listener_id.to_string()))
    }

    /// Stimulus reference behind an opaque token.
    pub fn stimulus_ref(&self, token: &str) -> Option<&str> {
        self.stimuli.get(token).map(String::as_str)
    }

    /// Chooses screens for a new listener without mutating the study.
    ///
    /// Quotas follow category sizes; within a category screens are taken
    /// by fewest ratings, then fewest outstanding assignments, then a draw
    /// from the study seed and listener id. The final order is shuffled
    /// with the same generator.
    pub fn plan_registration(
        &self,
        listener_id: Option<&str>,
        metadata: ListenerMetadata,
    ) -> Result<Registration, StudyError> {
        if self.closed {
            return Err(StudyError::StudyClosed(self.id.clone()));
        }
        let listener_id = match listener_id {
            Some("") => {
                return Err(StudyError::BadRequest("listener id must be non-empty".into()))
            }
            Some(id) => id.to_string(),
            None => {
                let mut i = self.listener_order.len();
                loop {
                    let t = listener_token(&self.id, self.config.rng_seed, i);
                    if !self.listeners.contains_key(&t) {
                        break t;
                    }
                    i += 1;
                }
            }
        };
        if self.listeners.contains_key(&listener_id) {
            return Err(StudyError::DuplicateListener(listener_id));
        }
        let n = self.config.screens_per_listener;
        if self.screens.len() < n {
            return Err(StudyError::InsufficientScreens {
                available: self.screens.len(),
                requested: n,
            });
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed ^ fnv1a(&listener_id));
        let mut by_category: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.screens.iter().enumerate() {
            by_category.entry(&s.category).or_default().push(i);
        }
        let sizes: Vec<usize> = by_category.values().map(Vec::len).collect();
        let quotas = apportion(&sizes, n);

        let mut chosen = Vec::with_capacity(n);
        for (members, quota) in by_category.into_values().zip(quotas) {
            let mut members = members;
            members.shuffle(&mut rng);
            members.sort_by_key(|&i| (self.rating_counts[i], self.assigned_counts[i]));
            chosen.extend_from_slice(&members[..quota]);
        }
        chosen.shuffle(&mut rng);
        Ok(Registration {
            listener_id,
            metadata,
            screens: chosen.into_iter().map(|i| self.screens[i].id.clone()).collect(),
        })
    }

    /// Applies a registration, validating it against the study.
    pub fn apply_registration(&mut self, reg: Registration) -> Result<&Assignment, StudyError> {
        if self.listeners.contains_key(&reg.listener_id) {
            return Err(StudyError::DuplicateListener(reg.listener_id));
        }
        let mut seen = HashSet::new();
        let mut indices = Vec::with_capacity(reg.screens.len());
        for s in &reg.screens {
            let i = *self
                .screen_index
                .get(s)
                .ok_or_else(|| StudyError::UnknownScreen(s.clone()))?;
            if !seen.insert(i) {
                return Err(StudyError::BadRequest(format!("screen {s:?} assigned twice")));
            }
            indices.push(i);
        }
        for i in indices {
            self.assigned_counts[i] += 1;
        }
        let id = reg.listener_id.clone();
        self.listener_order.push(id.clone());
        let state = self.listeners.entry(id.clone()).or_insert(ListenerState {
            metadata: reg.metadata,
            assignment: Assignment {
                listener_id: id,
                screens: reg.screens,
                cursor: 0,
            },
            answered: HashSet::new(),
        });
        Ok(&state.assignment)
    }

    /// Current screen for a listener with system labels withheld.
    pub fn next_screen(&self, listener_id: &str) -> Result<NextScreen, StudyError> {
        let a = self.assignment(listener_id)?;
        let total = a.screens.len();
        let Some(screen_id) = a.screens.get(a.cursor) else {
            return Ok(NextScreen::Done { total });
        };
        let screen = self.screen(screen_id).expect("assigned screens exist");
        let slots = screen
            .stimulus_refs
            .iter()
            .enumerate()
            .map(|(slot, r)| SlotView {
                slot,
                audio_url: format!("{AUDIO_ROUTE}{}", stimulus_token(&self.id, self.config.rng_seed, r)),
            })
            .collect();
        Ok(NextScreen::Screen {
            screen: ScreenView {
                screen_id: screen.id.clone(),
                kind: screen.kind,
                slots,
                position: a.cursor + 1,
                total,
            },
        })
    }

    /// Validates a submission against the listener's current screen.
    pub fn check_response(&self, listener_id: &str, screen_id: &str, payload: &Payload) -> Result<(), StudyError> {
        if self.closed {
            return Err(StudyError::StudyClosed(self.id.clone()));
        }
        let state = self
            .listeners
            .get(listener_id)
            .ok_or_else(|| StudyError::UnknownListener(listener_id.to_string()))?;
        let &index = self
            .screen_index
            .get(screen_id)
            .ok_or_else(|| StudyError::UnknownScreen(screen_id.to_string()))?;
        if state.answered.contains(&index) {
            return Err(StudyError::AlreadyAnswered(screen_id.to_string()));
        }
        let a = &state.assignment;
        match a.screens.get(a.cursor) {
            None => return Err(StudyError::AssignmentComplete),
            Some(current) if current != screen_id => {
                return Err(StudyError::WrongScreen {
                    screen_id: screen_id.to_string(),
                    expected: current.clone(),
                })
            }
            Some(_) => {}
        }
        payload.validate_for(self.screens[index].kind)
    }

    pub fn apply_response(&mut self, response: Response) -> Result<(), StudyError> {
        self.check_response(&response.listener_id, &response.screen_id, &response.payload)?;
        let index = self.screen_index[&response.screen_id];
        let state = self.listeners.get_mut(&response.listener_id).expect("checked");
        state.answered.insert(index);
        state.assignment.cursor += 1;
        self.rating_counts[index] += 1;
        self.responses.push(response);
        Ok(())
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn stats(&self) -> StudyStats {
        let counts = &self.rating_counts;
        let completed = self
            .listeners
            .values()
            .filter(|l| l.assignment.cursor == l.assignment.screens.len())
            .count();
        let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
        for (s, &c) in self.screens.iter().zip(counts) {
            let e = per_category.entry(s.category.clone()).or_insert(CategoryStats {
                screens: 0,
                min_ratings: usize::MAX,
                max_ratings: 0,
            });
            e.screens += 1;
            e.min_ratings = e.min_ratings.min(c);
            e.max_ratings = e.max_ratings.max(c);
        }
        StudyStats {
            study_id: self.id.clone(),
            closed: self.closed,
            screens: self.screens.len(),
            listeners: self.listener_order.len(),
            completed_listeners: completed,
            responses: self.responses.len(),
            min_ratings_per_screen: self.config.min_ratings_per_screen,
            screens_below_min: counts.iter().filter(|&&c| c < self.config.min_ratings_per_screen).count(),
            categories: per_category,
        }
    }

    /// Lossless snapshot with system labels unblinded.
    pub fn export(&self) -> StudyExport {
        StudyExport {
            study_id: self.id.clone(),
            config: self.config.clone(),
            closed: self.closed,
            screens: self.screens.clone(),
            listeners: self
                .listener_order
                .iter()
                .map(|id| {
                    let l = &self.listeners[id];
                    ListenerExport {
                        listener_id: id.clone(),
                        metadata: l.metadata.clone(),
                        screens: l.assignment.screens.clone(),
                    }
                })
                .collect(),
            responses: self.responses.clone(),
            rating_counts: self.rating_counts(),
        }
    }

    /// Rebuilds a study from an export, replaying registrations and
    /// responses in their recorded order.
    pub fn import(export: StudyExport) -> Result<Self, StudyError> {
        let mut study = Study::new(&export.study_id, export.screens, export.config)?;
        for l in export.listeners {
            study.apply_registration(Registration {
                listener_id: l.listener_id,
                metadata: l.metadata,
                screens: l.screens,
            })?;
        }
        for r in export.responses {
            study.apply_response(r)?;
        }
        if study.rating_counts() != export.rating_counts {
            return Err(StudyError::BadRequest("rating_counts disagree with responses".into()));
        }
        study.closed = export.closed;
        Ok(study)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListenerExport {
    pub listener_id: String,
    #[serde(default)]
    pub metadata: ListenerMetadata,
    pub screens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyExport {
    pub study_id: String,
    pub config: StudyConfig,
    pub closed: bool,
    pub screens: Vec<Screen>,
    /// Registration order.
    pub listeners: Vec<ListenerExport>,
    /// Acceptance order.
    pub responses: Vec<Response>,
    pub rating_counts: BTreeMap<String, usize>,
}

impl StudyExport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("export serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        serde_json::from_str(text).map_err(|e| StudyError::BadRequest(format!("study export: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub screens: usize,
    pub min_ratings: usize,
    pub max_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyStats {
    pub study_id: String,
    pub closed: bool,
    pub screens: usize,
    pub listeners: usize,
    pub completed_listeners: usize,
    pub responses: usize,
    pub min_ratings_per_screen: usize,
    pub screens_below_min: usize,
    pub categories: BTreeMap<String, CategoryStats>,
}
