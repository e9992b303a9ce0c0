//! Journal-backed study registry shared by the HTTP handlers.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::StudyError;
use crate::journal::{Event, Journal};
use crate::model::{Assignment, ListenerMetadata, NextScreen, Payload, Response, Screen, StudyConfig};
use crate::study::{Study, StudyExport, StudyStats};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateStudy {
    #[serde(default)]
    pub study_id: Option<String>,
    pub screens: Vec<Screen>,
    #[serde(default)]
    pub config: StudyConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RegisterListener {
    #[serde(default)]
    pub listener_id: Option<String>,
    #[serde(default)]
    pub metadata: ListenerMetadata,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub listener_id: String,
    pub screen_id: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub listener_id: String,
    pub screen_id: String,
    pub received_at: u64,
    /// Index of the listener's next screen.
    pub cursor: usize,
    pub total: usize,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn apply(studies: &mut BTreeMap<String, Study>, event: Event) -> Result<(), StudyError> {
    match event {
        Event::StudyCreated {
            study_id,
            config,
            screens,
        } => {
            if studies.contains_key(&study_id) {
                return Err(StudyError::DuplicateStudy(study_id));
            }
            let study = Study::new(&study_id, screens, config)?;
            studies.insert(study_id, study);
        }
        Event::ListenerRegistered { study_id, registration } => {
            let study = studies.get_mut(&study_id).ok_or(StudyError::UnknownStudy(study_id))?;
            study.apply_registration(registration)?;
        }
        Event::ResponseReceived { study_id, response } => {
            let study = studies.get_mut(&study_id).ok_or(StudyError::UnknownStudy(study_id))?;
            study.apply_response(response)?;
        }
        Event::StudyClosed { study_id } => {
            let study = studies.get_mut(&study_id).ok_or(StudyError::UnknownStudy(study_id))?;
            study.close();
        }
    }
    Ok(())
}

/// Writers are serialized by the journal mutex. Each write validates
/// against current state, appends durably, then applies under a short
/// write lock, so readers always see a prefix of the journal.
#[derive(Debug)]
pub struct StudyService {
    journal: Mutex<Journal>,
    studies: RwLock<BTreeMap<String, Study>>,
    audio_dir: Option<PathBuf>,
}

impl StudyService {
    /// Opens the journal and replays it.
    pub fn open(journal_path: &Path, audio_dir: Option<PathBuf>) -> Result<Self, StudyError> {
        let (journal, events) = Journal::open(journal_path)?;
        let mut studies = BTreeMap::new();
        let n = events.len();
        for (i, ev) in events.into_iter().enumerate() {
            apply(&mut studies, ev)
                .map_err(|e| StudyError::Journal(format!("replaying event {}: {e}", i + 1)))?;
        }
        log::info!(
            "replayed {n} journal events into {} studies from {}",
            studies.len(),
            journal_path.display()
        );
        Ok(Self {
            journal: Mutex::new(journal),
            studies: RwLock::new(studies),
            audio_dir,
        })
    }

    fn writer(&self) -> MutexGuard<'_, Journal> {
        self.journal.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn read<T>(&self, f: impl FnOnce(&BTreeMap<String, Study>) -> Result<T, StudyError>) -> Result<T, StudyError> {
        let guard = self.studies.read().unwrap_or_else(|p| p.into_inner());
        f(&guard)
    }

    fn with_study<T>(&self, study_id: &str, f: impl FnOnce(&Study) -> Result<T, StudyError>) -> Result<T, StudyError> {
        self.read(|m| {
            let s = m
                .get(study_id)
                .ok_or_else(|| StudyError::UnknownStudy(study_id.to_string()))?;
            f(s)
        })
    }

    fn commit(&self, journal: &mut Journal, event: Event) -> Result<(), StudyError> {
        journal.append(&event)?;
        let mut guard = self.studies.write().unwrap_or_else(|p| p.into_inner());
        apply(&mut guard, event)
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.read(|m| Ok(m.keys().cloned().collect())).unwrap_or_default()
    }

    pub fn create_study(&self, req: CreateStudy) -> Result<String, StudyError> {
        let mut journal = self.writer();
        let study_id = match req.study_id {
            Some(id) => id,
            None => self.read(|m| {
                Ok((m.len() + 1..)
                    .map(|i| format!("study-{i}"))
                    .find(|id| !m.contains_key(id))
                    .expect("unbounded range"))
            })?,
        };
        self.read(|m| {
            if m.contains_key(&study_id) {
                return Err(StudyError::DuplicateStudy(study_id.clone()));
            }
            Ok(())
        })?;
        // validation only; the study is rebuilt from the event
        Study::new(&study_id, req.screens.clone(), req.config.clone())?;
        self.commit(
            &mut journal,
            Event::StudyCreated {
                study_id: study_id.clone(),
                config: req.config,
                screens: req.screens,
            },
        )?;
        Ok(study_id)
    }

    pub fn register_listener(&self, study_id: &str, req: RegisterListener) -> Result<Assignment, StudyError> {
        let mut journal = self.writer();
        let registration =
            self.with_study(study_id, |s| s.plan_registration(req.listener_id.as_deref(), req.metadata))?;
        let listener_id = registration.listener_id.clone();
        self.commit(
            &mut journal,
            Event::ListenerRegistered {
                study_id: study_id.to_string(),
                registration,
            },
        )?;
        drop(journal);
        self.with_study(study_id, |s| s.assignment(&listener_id).cloned())
    }

    pub fn next_screen(&self, study_id: &str, listener_id: &str) -> Result<NextScreen, StudyError> {
        self.with_study(study_id, |s| s.next_screen(listener_id))
    }

    /// Returns only after the response is on disk.
    pub fn submit(&self, study_id: &str, req: SubmitResponse) -> Result<Ack, StudyError> {
        let mut journal = self.writer();
        self.with_study(study_id, |s| s.check_response(&req.listener_id, &req.screen_id, &req.payload))?;
        let response = Response {
            listener_id: req.listener_id,
            screen_id: req.screen_id,
            payload: req.payload,
            received_at: now_ms(),
        };
        let mut ack = Ack {
            listener_id: response.listener_id.clone(),
            screen_id: response.screen_id.clone(),
            received_at: response.received_at,
            cursor: 0,
            total: 0,
        };
        self.commit(
            &mut journal,
            Event::ResponseReceived {
                study_id: study_id.to_string(),
                response,
            },
        )?;
        drop(journal);
        let a = self.with_study(study_id, |s| s.assignment(&ack.listener_id).cloned())?;
        ack.cursor = a.cursor;
        ack.total = a.screens.len();
        Ok(ack)
    }

    pub fn close_study(&self, study_id: &str) -> Result<(), StudyError> {
        let mut journal = self.writer();
        let closed = self.with_study(study_id, |s| Ok(s.is_closed()))?;
        if closed {
            return Ok(());
        }
        self.commit(
            &mut journal,
            Event::StudyClosed {
                study_id: study_id.to_string(),
            },
        )
    }

    pub fn export(&self, study_id: &str) -> Result<StudyExport, StudyError> {
        self.with_study(study_id, |s| Ok(s.export()))
    }

    pub fn stats(&self, study_id: &str) -> Result<StudyStats, StudyError> {
        self.with_study(study_id, |s| Ok(s.stats()))
    }

    /// Resolves an opaque stimulus id to a file under the audio directory.
    pub fn stimulus_path(&self, token: &str) -> Result<PathBuf, StudyError> {
        let dir = self
            .audio_dir
            .as_ref()
            .ok_or_else(|| StudyError::UnknownStimulus(token.to_string()))?;
        let r = self.read(|m| {
            m.values()
                .find_map(|s| s.stimulus_ref(token).map(str::to_string))
                .ok_or_else(|| StudyError::UnknownStimulus(token.to_string()))
        })?;
        Ok(dir.join(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScreenKind;

    fn screens(n: usize) -> Vec<Screen> {
        (0..n)
            .map(|i| Screen {
                id: format!("s{i}"),
                kind: ScreenKind::Mos,
                stimulus_refs: vec![format!("a/{i}.wav")],
                category: if i % 2 == 0 { "same" } else { "diff" }.into(),
                system_labels: vec!["x".into()],
                item: None,
            })
            .collect()
    }

    fn create(svc: &StudyService, id: &str) {
        svc.create_study(CreateStudy {
            study_id: Some(id.into()),
            screens: screens(6),
            config: StudyConfig {
                screens_per_listener: 4,
                min_ratings_per_screen: 2,
                rng_seed: 9,
            },
        })
        .unwrap();
    }

    fn answer(svc: &StudyService, study: &str, listener: &str) -> Option<Ack> {
        match svc.next_screen(study, listener).unwrap() {
            NextScreen::Screen { screen } => Some(
                svc.submit(
                    study,
                    SubmitResponse {
                        listener_id: listener.into(),
                        screen_id: screen.screen_id,
                        payload: Payload::Mos(4),
                    },
                )
                .unwrap(),
            ),
            NextScreen::Done { .. } => None,
        }
    }

    #[test]
    fn replay_restores_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        let before = {
            let svc = StudyService::open(&path, None).unwrap();
            create(&svc, "st");
            svc.register_listener("st", RegisterListener::default()).unwrap();
            let l = svc
                .register_listener(
                    "st",
                    RegisterListener {
                        listener_id: Some("bob".into()),
                        metadata: [("lang".to_string(), "en".to_string())].into(),
                    },
                )
                .unwrap();
            assert_eq!(l.screens.len(), 4);
            let ack = answer(&svc, "st", "bob").unwrap();
            assert_eq!((ack.cursor, ack.total), (1, 4));
            answer(&svc, "st", "bob").unwrap();
            svc.export("st").unwrap()
        };
        let svc = StudyService::open(&path, None).unwrap();
        assert_eq!(svc.export("st").unwrap(), before);
        assert_eq!(before.responses.len(), 2);
        assert_eq!(svc.study_ids(), vec!["st".to_string()]);
    }

    #[test]
    fn errors_carry_codes() {
        let dir = tempfile::tempdir().unwrap();
        let svc = StudyService::open(&dir.path().join("j"), None).unwrap();
        create(&svc, "st");
        let dup = svc
            .create_study(CreateStudy {
                study_id: Some("st".into()),
                screens: screens(6),
                config: StudyConfig::default(),
            })
            .unwrap_err();
        assert_eq!(dup.code(), "duplicate_study");
        assert_eq!(svc.next_screen("nope", "x").unwrap_err().code(), "unknown_study");
        svc.close_study("st").unwrap();
        let err = svc.register_listener("st", RegisterListener::default()).unwrap_err();
        assert_eq!(err.code(), "study_closed");
        assert_eq!(svc.stimulus_path("abc").unwrap_err().code(), "unknown_stimulus");
    }

    #[test]
    fn generated_ids_do_not_collide() {
        let dir = tempfile::tempdir().unwrap();
        let svc = StudyService::open(&dir.path().join("j"), None).unwrap();
        create(&svc, "study-2");
        let mk = || CreateStudy {
            study_id: None,
            screens: screens(6),
            config: StudyConfig::default(),
        };
        assert_eq!(svc.create_study(mk()).unwrap(), "study-3");
        assert_eq!(svc.create_study(mk()).unwrap(), "study-4");
    }

    #[test]
    fn stimulus_tokens_resolve() {
        let dir = tempfile::tempdir().unwrap();
        let svc = StudyService::open(&dir.path().join("j"), Some(dir.path().to_path_buf())).unwrap();
        create(&svc, "st");
        let a = svc.register_listener("st", RegisterListener::default()).unwrap();
        let NextScreen::Screen { screen } = svc.next_screen("st", &a.listener_id).unwrap() else {
            panic!("expected a screen");
        };
        let token = screen.slots[0].audio_url.trim_start_matches("/audio/");
        let path = svc.stimulus_path(token).unwrap();
        assert!(path.starts_with(dir.path()));
        assert!(path.to_string_lossy().ends_with(".wav"));
    }
}
