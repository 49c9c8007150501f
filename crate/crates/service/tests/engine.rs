mod common;

use std::collections::BTreeSet;
use std::time::Duration;

use whittle_core::Response;
use whittle_service::engine::CreateSession;
use whittle_service::session::{AttributeRef, KeywordPredicate, Level};
use whittle_service::{Engine, EngineConfig, FeedbackRequest, Mode, PageRequest, ServiceError, Statement};

fn create(mode: Mode, seed: u64) -> CreateSession {
    CreateSession {
        dataset: common::DATASET.into(),
        mode,
        keyword_filter: vec![],
        seed: Some(seed),
        page_size: None,
    }
}

fn answer(token: &str, response: Response) -> FeedbackRequest {
    FeedbackRequest {
        response: Some(response),
        question_token: Some(token.into()),
        ..Default::default()
    }
}

fn statement(ref_id: usize, attribute: usize, response: Response, confidence: u8) -> Statement {
    Statement {
        ref_id,
        attribute: AttributeRef::Index(attribute),
        response,
        confidence,
    }
}

#[test]
fn active_sessions_start_at_a_root_pivot() {
    let engine = common::engine();
    let index = common::index();
    let created = engine.create_session(create(Mode::Active, 1)).unwrap();
    let q = created.question.unwrap();
    let root = index.trees[q.attribute].node(index.trees[q.attribute].root());
    assert_eq!(q.pivot_id, root.pivot_image);
    assert_eq!(q.attribute_name, index.attribute_names[q.attribute]);
}

#[test]
fn same_seed_gives_the_same_first_page() {
    let engine = common::engine();
    let a = engine.create_session(create(Mode::Free, 42)).unwrap();
    let b = engine.create_session(create(Mode::Free, 42)).unwrap();
    let c = engine.create_session(create(Mode::Free, 43)).unwrap();
    assert_ne!(a.session_id, b.session_id);
    assert_eq!(a.page, b.page);
    assert_ne!(a.page, c.page);
    assert_eq!(a.page.items.len(), 40);
}

#[test]
fn keyword_filter_keeps_tercile_matches_first() {
    let engine = common::engine();
    let index = common::index();
    let filter = vec![
        KeywordPredicate {
            attribute: AttributeRef::Name(index.attribute_names[0].clone()),
            level: Level::High,
        },
        KeywordPredicate {
            attribute: AttributeRef::Index(2),
            level: Level::Low,
        },
    ];
    let tercile = |m: usize, k: usize| {
        let mut v = index.space.column(m);
        v.sort_by(f64::total_cmp);
        v[(k * v.len()).div_ceil(3) - 1]
    };
    let (hi0, lo2) = (tercile(0, 2), tercile(2, 1));
    let matches: BTreeSet<usize> = (0..index.n())
        .filter(|&i| index.space.value(i, 0) > hi0 && index.space.value(i, 2) <= lo2)
        .collect();
    assert!(!matches.is_empty());
    let created = engine
        .create_session(CreateSession {
            keyword_filter: filter,
            page_size: Some(index.n()),
            ..create(Mode::Free, 3)
        })
        .unwrap();
    let head: BTreeSet<usize> = created.page.items[..matches.len()].iter().map(|it| it.id).collect();
    assert_eq!(head, matches);

    let impossible = vec![
        KeywordPredicate {
            attribute: AttributeRef::Index(1),
            level: Level::High,
        },
        KeywordPredicate {
            attribute: AttributeRef::Index(1),
            level: Level::Low,
        },
    ];
    let err = engine
        .create_session(CreateSession {
            keyword_filter: impossible,
            ..create(Mode::Free, 3)
        })
        .unwrap_err();
    assert!(matches!(err, ServiceError::EmptyFilter));
}

#[test]
fn unknown_dataset_is_rejected() {
    let engine = common::engine();
    let err = engine
        .create_session(CreateSession {
            dataset: "nope".into(),
            ..create(Mode::Free, 0)
        })
        .unwrap_err();
    assert!(matches!(err, ServiceError::UnknownDataset(_)));
}

#[test]
fn equal_answers_retire_their_attribute() {
    let engine = common::engine();
    let created = engine.create_session(create(Mode::Active, 5)).unwrap();
    let id = created.session_id;
    let first = created.question.unwrap();
    let out = engine.submit_feedback(&id, &answer(&first.token, Response::Equal)).unwrap();
    assert_eq!(out.iteration, 1);
    let mut q = out.question.unwrap();
    for _ in 0..30 {
        assert_ne!(q.attribute, first.attribute);
        match engine.submit_feedback(&id, &answer(&q.token, Response::More)).unwrap().question {
            Some(next) => q = next,
            None => break,
        }
    }
}

#[test]
fn answered_tokens_cannot_be_replayed() {
    let engine = common::engine();
    let created = engine.create_session(create(Mode::Active, 6)).unwrap();
    let id = created.session_id;
    let token = created.question.unwrap().token;
    engine.submit_feedback(&id, &answer(&token, Response::Less)).unwrap();
    let err = engine.submit_feedback(&id, &answer(&token, Response::Less)).unwrap_err();
    assert!(matches!(err, ServiceError::StaleQuestion));
    assert_eq!(engine.export(&id).unwrap().history.len(), 1);
    let err = engine
        .submit_feedback(
            &id,
            &FeedbackRequest {
                response: Some(Response::More),
                ..Default::default()
            },
        )
        .unwrap_err();
    assert!(matches!(err, ServiceError::BadRequest(_)));
}

#[test]
fn active_sessions_end_exhausted() {
    let engine = common::engine();
    let created = engine.create_session(create(Mode::Active, 8)).unwrap();
    let id = created.session_id;
    let mut q = created.question;
    let mut asked = 0;
    while let Some(cur) = q {
        let out = engine.submit_feedback(&id, &answer(&cur.token, Response::More)).unwrap();
        asked += 1;
        assert_eq!(out.exhausted, out.question.is_none());
        q = out.question;
    }
    let depth: usize = common::index().trees.iter().map(|t| t.depth()).sum();
    assert!(asked <= depth);
    let err = engine.submit_feedback(&id, &answer("x", Response::More)).unwrap_err();
    assert!(matches!(err, ServiceError::Exhausted));
}

#[test]
fn free_statements_need_a_shown_reference() {
    let engine = common::engine();
    let created = engine.create_session(create(Mode::Free, 9)).unwrap();
    let shown: BTreeSet<usize> = created.page.items.iter().map(|it| it.id).collect();
    let unseen = (0..300).find(|i| !shown.contains(i)).unwrap();
    let req = FeedbackRequest {
        statements: vec![statement(unseen, 0, Response::More, 2)],
        ..Default::default()
    };
    let err = engine.submit_feedback(&created.session_id, &req).unwrap_err();
    assert!(matches!(err, ServiceError::NotShown(id) if id == unseen));
    // A rejected batch leaves no trace.
    let ok = *shown.iter().next().unwrap();
    let mixed = FeedbackRequest {
        statements: vec![statement(ok, 0, Response::More, 2), statement(unseen, 1, Response::Less, 2)],
        ..Default::default()
    };
    assert!(engine.submit_feedback(&created.session_id, &mixed).is_err());
    assert!(engine.export(&created.session_id).unwrap().history.is_empty());
}

#[test]
fn strong_statement_lifts_its_best_match() {
    let engine = common::engine();
    let index = common::index();
    let created = engine.create_session(create(Mode::Free, 10)).unwrap();
    let id = created.session_id;
    let reference = created.page.items[0].id;
    let best = (0..index.n())
        .max_by(|&a, &b| index.space.value(a, 3).total_cmp(&index.space.value(b, 3)))
        .unwrap();
    let before = engine.ranking(&id).unwrap().iter().position(|&i| i == best).unwrap();
    let req = FeedbackRequest {
        statements: vec![statement(reference, 3, Response::More, 3)],
        ..Default::default()
    };
    let out = engine.submit_feedback(&id, &req).unwrap();
    let after = engine.ranking(&id).unwrap().iter().position(|&i| i == best).unwrap();
    assert!(after <= before);
    assert_eq!(out.iteration, 1);
    assert_eq!(engine.export(&id).unwrap().history[0].weight, 2.0);
}

#[test]
fn pages_tile_the_ranking() {
    let engine = common::engine();
    let id = engine.create_session(create(Mode::Free, 11)).unwrap().session_id;
    let mut all = Vec::new();
    for page in 0..8 {
        let p = engine.results(&id, PageRequest { page, page_size: 40 }).unwrap();
        assert_eq!(p.total, 300);
        assert_eq!(p.items.len(), if page == 7 { 20 } else { 40 });
        all.extend(p.items.iter().map(|it| it.id));
    }
    assert_eq!(all, engine.ranking(&id).unwrap());
    let mut sorted = all.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, (0..300).collect::<Vec<_>>());
    assert!(matches!(
        engine.results(&id, PageRequest { page: 8, page_size: 40 }),
        Err(ServiceError::PageOutOfRange { .. })
    ));
    assert!(engine.results(&id, PageRequest { page: 0, page_size: 0 }).is_err());
    // Everything has now been displayed, so any image can be referenced.
    let req = FeedbackRequest {
        statements: vec![statement(299, 1, Response::Less, 1)],
        ..Default::default()
    };
    engine.submit_feedback(&id, &req).unwrap();
}

#[test]
fn hybrid_marks_order_the_marked_images() {
    let engine = common::engine();
    let created = engine.create_session(create(Mode::Hybrid, 12)).unwrap();
    let id = created.session_id;
    let (a, b) = (created.page.items[3].id, created.page.items[9].id);
    let req = FeedbackRequest {
        relevant: vec![a],
        irrelevant: vec![b],
        page_size: Some(300),
        ..Default::default()
    };
    let out = engine.submit_feedback(&id, &req).unwrap();
    let pos = |x: usize| out.page.items.iter().position(|it| it.id == x).unwrap();
    assert!(pos(a) < pos(b));
    let conflict = FeedbackRequest {
        relevant: vec![b],
        ..Default::default()
    };
    assert!(matches!(
        engine.submit_feedback(&id, &conflict),
        Err(ServiceError::BadRequest(_))
    ));
    let record = engine.export(&id).unwrap();
    assert!(record.binary.relevant.contains(&a) && record.binary.irrelevant.contains(&b));
}

#[test]
fn payloads_must_match_the_mode() {
    let engine = common::engine();
    let free = engine.create_session(create(Mode::Free, 13)).unwrap();
    let shown = free.page.items[0].id;
    for bad in [
        FeedbackRequest::default(),
        FeedbackRequest {
            relevant: vec![shown],
            ..Default::default()
        },
        FeedbackRequest {
            statements: vec![statement(shown, 0, Response::More, 2)],
            response: Some(Response::More),
            ..Default::default()
        },
        FeedbackRequest {
            statements: vec![statement(shown, 0, Response::More, 7)],
            ..Default::default()
        },
        FeedbackRequest {
            statements: vec![Statement {
                attribute: AttributeRef::Name("sparkly".into()),
                ..statement(shown, 0, Response::More, 2)
            }],
            ..Default::default()
        },
    ] {
        assert!(matches!(
            engine.submit_feedback(&free.session_id, &bad),
            Err(ServiceError::BadRequest(_))
        ));
    }
    let active = engine.create_session(create(Mode::Active, 13)).unwrap();
    let req = FeedbackRequest {
        statements: vec![statement(shown, 0, Response::More, 2)],
        ..Default::default()
    };
    assert!(engine.submit_feedback(&active.session_id, &req).is_err());
}

#[test]
fn restored_sessions_continue_identically() {
    let engine = common::engine();
    for mode in [Mode::Free, Mode::Active, Mode::Hybrid] {
        let created = engine.create_session(create(mode, 14)).unwrap();
        let id = created.session_id;
        let items: Vec<usize> = created.page.items.iter().map(|it| it.id).collect();
        let mut q = created.question;
        for round in 0..4 {
            let req = match mode {
                Mode::Active => answer(&q.take().unwrap().token, Response::ALL[round % 3]),
                Mode::Free => FeedbackRequest {
                    statements: vec![statement(items[round], round % 6, Response::More, 2 + (round % 2) as u8)],
                    ..Default::default()
                },
                Mode::Hybrid => FeedbackRequest {
                    statements: vec![statement(items[round], round % 6, Response::Less, 2)],
                    relevant: vec![items[10 + round]],
                    irrelevant: vec![items[20 + round]],
                    ..Default::default()
                },
            };
            q = engine.submit_feedback(&id, &req).unwrap().question;
        }
        let record = engine.export(&id).unwrap();
        let json = serde_json::to_string(&record).unwrap();
        let fresh = Engine::new(EngineConfig::default()).with_dataset(common::index());
        let restored = fresh.restore(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(restored, id);
        assert_eq!(fresh.ranking(&id).unwrap(), engine.ranking(&id).unwrap(), "{mode:?}");
        let (a, b) = (fresh.question(&id).unwrap(), engine.question(&id).unwrap());
        assert_eq!(a.map(|q| (q.attribute, q.pivot_id)), b.map(|q| (q.attribute, q.pivot_id)));
        assert_eq!(fresh.export(&id).unwrap(), record);
    }
}

#[test]
fn idle_sessions_expire() {
    let engine = Engine::new(EngineConfig {
        ttl: Duration::from_millis(30),
        ..EngineConfig::default()
    })
    .with_dataset(common::index());
    let a = engine.create_session(create(Mode::Free, 1)).unwrap().session_id;
    let b = engine.create_session(create(Mode::Free, 2)).unwrap().session_id;
    assert_eq!(engine.session_count(), 2);
    std::thread::sleep(Duration::from_millis(60));
    assert!(matches!(
        engine.results_with_defaults(&a, None, None),
        Err(ServiceError::UnknownSession(_))
    ));
    assert_eq!(engine.evict_expired(), 1);
    assert_eq!(engine.session_count(), 0);
    assert!(engine.export(&b).is_err());
}
