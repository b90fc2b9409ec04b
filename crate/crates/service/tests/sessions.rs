mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use survey_core::active::{offline_order, Criterion};
use survey_core::data::{scale_category, unscale_value};
use survey_core::harness::ModelKind;
use survey_core::pmf::{posterior_update, predict_response};
use survey_service::session::{BeliefState, PredictionFlag};
use survey_service::store::{read_events, serialize_session};
use survey_service::{CreateSession, ServiceError, Session, SessionStatus, SessionStore, SubmitResponse};

fn request(budget: usize) -> CreateSession {
    CreateSession { budget, ..CreateSession::default() }
}

fn answer(id: &str, value: f64) -> SubmitResponse {
    SubmitResponse { question_id: id.to_string(), value: Some(value), skip: false }
}

fn skip(id: &str) -> SubmitResponse {
    SubmitResponse { question_id: id.to_string(), value: None, skip: true }
}

fn gaussian_belief(s: &Session) -> &survey_core::pmf::GaussianBelief {
    match &s.state {
        BeliefState::Gaussian { belief } => belief,
        BeliefState::Ordinal { .. } => panic!("expected a gaussian session"),
    }
}

#[test]
fn fresh_session_and_budget_check() {
    let store = SessionStore::new(common::fitted_gaussian());
    let s = store.create(&request(4)).unwrap();
    assert!(!s.id.is_empty());
    assert!(s.asked.is_empty());
    assert_eq!(s.status, SessionStatus::Active);
    let err = store.create(&request(11)).unwrap_err();
    assert!(matches!(err, ServiceError::InvalidRequest(ref m) if m.contains("exceeds")));
    let other = store.create(&request(4)).unwrap();
    assert_ne!(other.id, s.id);
}

#[test]
fn active_sessions_follow_the_offline_order() {
    let file = common::fitted_gaussian();
    let g = file.gaussian.clone().unwrap();
    let order = offline_order(&g.prior, g.factors.question_factors(), &g.noise, Criterion::A, 5).unwrap();
    let store = SessionStore::new(file.clone());
    for _ in 0..2 {
        let id = store.create(&request(5)).unwrap().id;
        for (step, &j) in order.sequence.iter().enumerate() {
            let q = store.next_question(&id).unwrap().question.unwrap();
            assert_eq!(q.question_id, file.questions[j].id);
            assert_eq!(q.step, step + 1);
            store.submit(&id, &answer(&q.question_id, 1.0 + (step % 5) as f64)).unwrap();
        }
    }
}

#[test]
fn next_question_is_idempotent() {
    let store = SessionStore::new(common::fitted_gaussian());
    let id = store.create(&request(3)).unwrap().id;
    let a = store.next_question(&id).unwrap();
    let b = store.next_question(&id).unwrap();
    assert_eq!(a, b);
    assert_eq!(store.get(&id).unwrap().events, 2);
}

#[test]
fn wrong_question_leaves_state_unchanged() {
    let store = SessionStore::new(common::fitted_gaussian());
    let id = store.create(&request(3)).unwrap().id;
    assert!(matches!(store.submit(&id, &answer("q1", 2.0)), Err(ServiceError::NoPendingQuestion)));
    let pending = store.next_question(&id).unwrap().question.unwrap().question_id;
    let other = store.model().questions.iter().find(|q| q.id != pending).unwrap().id.clone();
    let before = serialize_session(&store.get(&id).unwrap()).unwrap();
    assert!(matches!(store.submit(&id, &answer(&other, 2.0)), Err(ServiceError::OutOfOrder { .. })));
    assert!(matches!(store.submit(&id, &answer(&pending, 9.0)), Err(ServiceError::InvalidValue(_))));
    assert!(matches!(store.submit(&id, &answer(&pending, 2.5)), Err(ServiceError::InvalidValue(_))));
    let both = SubmitResponse { question_id: pending.clone(), value: Some(1.0), skip: true };
    assert!(matches!(store.submit(&id, &both), Err(ServiceError::InvalidValue(_))));
    assert_eq!(serialize_session(&store.get(&id).unwrap()).unwrap(), before);
    assert!(matches!(store.next_question("nope"), Err(ServiceError::UnknownSession(_))));
}

#[test]
fn gaussian_belief_matches_library_update() {
    let file = common::fitted_gaussian();
    let g = file.gaussian.clone().unwrap();
    let store = SessionStore::new(file.clone());
    let id = store.create(&CreateSession { strategy: Some("random".into()), seed: Some(3), ..request(6) }).unwrap().id;
    let mut expected = g.prior.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..6 {
        let q = store.next_question(&id).unwrap().question.unwrap();
        let j = file.question_index(&q.question_id).unwrap();
        if rng.random_bool(0.2) {
            store.submit(&id, &skip(&q.question_id)).unwrap();
            continue;
        }
        let m = rng.random_range(1..=q.num_categories) as f64;
        store.submit(&id, &answer(&q.question_id, m)).unwrap();
        let v = g.factors.question_factors().row(j).transpose();
        expected = posterior_update(&expected, &v, scale_category(m, q.num_categories), &g.noise).unwrap();
        let s = store.get(&id).unwrap();
        let got = gaussian_belief(&s);
        assert!((got.mean() - expected.mean()).amax() < 1e-12);
        assert!((got.precision() - expected.precision()).amax() < 1e-12);
    }
    let s = store.get(&id).unwrap();
    assert_eq!(s.status, SessionStatus::Completed);
    assert_eq!(s.asked.len(), 6);
    assert_eq!(store.next_question(&id).unwrap().question, None);
    assert!(matches!(store.submit(&id, &answer("q1", 1.0)), Err(ServiceError::SessionClosed(_))));
}

#[test]
fn predictions_start_at_prior_and_echo_answers() {
    let file = common::fitted_gaussian();
    let g = file.gaussian.clone().unwrap();
    let store = SessionStore::new(file.clone());
    let id = store.create(&request(3)).unwrap().id;
    let pre = store.predictions(&id).unwrap();
    for (j, p) in pre.iter().enumerate() {
        let v = g.factors.question_factors().row(j).transpose();
        let direct = predict_response(&g.prior, &v, &g.noise).unwrap();
        assert_eq!(p.flag, PredictionFlag::Imputed);
        assert!((p.value - unscale_value(direct.clamped_mean, file.questions[j].num_categories)).abs() < 1e-12);
    }
    let q = store.next_question(&id).unwrap().question.unwrap();
    store.submit(&id, &answer(&q.question_id, 4.0)).unwrap();
    let q2 = store.next_question(&id).unwrap().question.unwrap();
    store.submit(&id, &skip(&q2.question_id)).unwrap();
    let after = store.predictions(&id).unwrap();
    let asked = after.iter().find(|p| p.question_id == q.question_id).unwrap();
    assert_eq!((asked.flag, asked.response, asked.value), (PredictionFlag::Asked, Some(4.0), 4.0));
    let skipped = after.iter().find(|p| p.question_id == q2.question_id).unwrap();
    assert_eq!(skipped.flag, PredictionFlag::Skipped);
}

#[test]
fn gaussian_variance_never_grows() {
    let file = common::fitted_gaussian();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..10 {
        let store = SessionStore::new(file.clone());
        let id = store
            .create(&CreateSession { strategy: Some("random".into()), seed: Some(trial), ..request(10) })
            .unwrap()
            .id;
        let mut previous = store.predictions(&id).unwrap();
        while let Some(q) = store.next_question(&id).unwrap().question {
            store.submit(&id, &answer(&q.question_id, rng.random_range(1..=5) as f64)).unwrap();
            let now = store.predictions(&id).unwrap();
            for (a, b) in previous.iter().zip(&now) {
                if b.flag == PredictionFlag::Imputed {
                    assert!(b.variance <= a.variance + 1e-12);
                }
            }
            previous = now;
        }
    }
}

#[test]
fn replay_reproduces_state_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let file = common::fitted_ordlogit();
    let store = SessionStore::open(file.clone(), dir.path()).unwrap();
    let mut ids = Vec::new();
    for (n, strategy) in ["adaptive", "random"].iter().enumerate() {
        let id = store.create(&CreateSession { strategy: Some(strategy.to_string()), ..request(5) }).unwrap().id;
        for step in 0..(3 + n) {
            let q = store.next_question(&id).unwrap().question.unwrap();
            if step == 1 {
                store.submit(&id, &skip(&q.question_id)).unwrap();
            } else {
                store.submit(&id, &answer(&q.question_id, (1 + step % 4) as f64)).unwrap();
            }
        }
        store.next_question(&id).unwrap();
        ids.push(id);
    }
    for id in &ids {
        let live = serialize_session(&store.get(id).unwrap()).unwrap();
        let events = read_events(&store.log_path(id).unwrap()).unwrap();
        let replayed = Session::replay(&events, &file).unwrap();
        assert_eq!(serialize_session(&replayed).unwrap(), live);
    }
    let reopened = SessionStore::open(file, dir.path()).unwrap();
    assert_eq!(reopened.ids().len(), 2);
    for id in &ids {
        assert_eq!(
            serialize_session(&reopened.get(id).unwrap()).unwrap(),
            serialize_session(&store.get(id).unwrap()).unwrap()
        );
        assert_eq!(reopened.next_question(id).unwrap(), store.next_question(id).unwrap());
    }
}

#[test]
fn concurrent_sessions_stay_isolated() {
    let file = common::fitted_gaussian();
    let g = file.gaussian.clone().unwrap();
    let store = Arc::new(SessionStore::new(file.clone()));
    let results: Vec<(String, Vec<f64>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..100)
            .map(|n| {
                let store = Arc::clone(&store);
                scope.spawn(move || {
                    let id = store.create(&request(4)).unwrap().id;
                    let answers: Vec<f64> = (0..4).map(|t| (1 + (n / 5usize.pow(t)) % 5) as f64).collect();
                    for &a in &answers {
                        let q = store.next_question(&id).unwrap().question.unwrap();
                        store.submit(&id, &answer(&q.question_id, a)).unwrap();
                    }
                    (id, answers)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut means = Vec::new();
    for (id, answers) in &results {
        let s = store.get(id).unwrap();
        assert_eq!(s.status, SessionStatus::Completed);
        let mut expected = g.prior.clone();
        for (item, &a) in s.asked.iter().zip(answers) {
            assert_eq!(item.response, Some(a));
            let j = file.question_index(&item.question_id).unwrap();
            let v = g.factors.question_factors().row(j).transpose();
            expected = posterior_update(&expected, &v, scale_category(a, 5), &g.noise).unwrap();
        }
        let got = gaussian_belief(&s);
        assert!((got.mean() - expected.mean()).amax() < 1e-12);
        means.push(got.mean().clone());
    }
    for a in 0..means.len() {
        for b in a + 1..means.len() {
            assert!((&means[a] - &means[b]).amax() > 1e-9, "sessions {a} and {b} share a belief");
        }
    }
}

#[test]
fn ordlogit_sessions_diverge_after_different_answers() {
    let store = SessionStore::new(common::witness_ordlogit());
    let fixed_first = |answer_value: f64| {
        let id = store.create(&CreateSession { model: Some(ModelKind::OrderedLogit), ..request(3) }).unwrap().id;
        let q = store.next_question(&id).unwrap().question.unwrap();
        assert_eq!(q.question_id, "w1");
        store.submit(&id, &answer("w1", answer_value)).unwrap();
        store.next_question(&id).unwrap().question.unwrap().question_id
    };
    assert_eq!(fixed_first(1.0), "w2");
    assert_eq!(fixed_first(2.0), "w3");
    assert_eq!(fixed_first(3.0), "w2");

    let gaussian = SessionStore::new(common::witness_gaussian());
    let mut seconds = Vec::new();
    for a in [1.0, 2.0, 3.0] {
        let id = gaussian.create(&request(3)).unwrap().id;
        let q = gaussian.next_question(&id).unwrap().question.unwrap();
        gaussian.submit(&id, &answer(&q.question_id, a)).unwrap();
        seconds.push(gaussian.next_question(&id).unwrap().question.unwrap().question_id);
    }
    assert!(seconds.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn strategy_errors_are_rejected() {
    let store = SessionStore::new(common::fitted_gaussian());
    let adaptive = CreateSession { strategy: Some("adaptive".into()), ..request(2) };
    assert!(matches!(
        store.create(&adaptive),
        Err(ServiceError::Core(survey_core::Error::StrategyModelMismatch { .. }))
    ));
    let ordlogit = CreateSession { model: Some(ModelKind::OrderedLogit), ..request(2) };
    assert!(matches!(store.create(&ordlogit), Err(ServiceError::InvalidRequest(_))));
    let fixed =
        CreateSession { strategy: Some("fixed".into()), order: Some(vec!["q3".into(), "q1".into()]), ..request(2) };
    assert!(store.create(&fixed).is_err());
    let ids: Vec<String> = (1..=10).rev().map(|j| format!("q{j}")).collect();
    let fixed = CreateSession { strategy: Some("fixed".into()), order: Some(ids), ..request(2) };
    let id = store.create(&fixed).unwrap().id;
    assert_eq!(store.next_question(&id).unwrap().question.unwrap().question_id, "q10");
}

#[test]
fn ending_a_session() {
    let store = SessionStore::new(common::fitted_gaussian());
    let id = store.create(&request(3)).unwrap().id;
    store.next_question(&id).unwrap();
    let p = store.end(&id, true).unwrap();
    assert_eq!(p.status, SessionStatus::Abandoned);
    assert!(store.get(&id).unwrap().pending.is_none());
    assert!(matches!(store.end(&id, false), Err(ServiceError::SessionClosed(_))));
}
