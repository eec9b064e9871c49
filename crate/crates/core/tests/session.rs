use std::collections::BTreeSet;

use pinview_core::corpus::{Corpus, FeatureSpec, ImageRecord};
use pinview_core::relevance::{train_predictor, RelevancePredictor, TrainingOptions};
use pinview_core::session::{
    round_seed, Advance, FeedbackEvent, Modality, SearchContext, Session, SessionConfig, SessionEvent,
    SessionSummary,
};
use pinview_core::sim::{
    generate_synthetic_corpus, generate_synthetic_pool, simulate_feedback, SimPool, SyntheticCorpusConfig,
    SyntheticPoolConfig,
};
use pinview_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_corpus(images: usize) -> Corpus {
    let config = SyntheticCorpusConfig { name: "toy".into(), images, ..Default::default() };
    generate_synthetic_corpus(&config, 3).unwrap()
}

fn pool() -> SimPool {
    generate_synthetic_pool(&SyntheticPoolConfig::with_separation(3.0), 100).unwrap()
}

fn context(images: usize) -> SearchContext {
    let predictor = train_predictor(&pool().training_set(), &TrainingOptions::default()).unwrap();
    SearchContext::new(small_corpus(images), predictor).unwrap()
}

fn config(modality: Modality, seed: u64) -> SessionConfig {
    SessionConfig { seed, target: Some("cat00".into()), ..SessionConfig::new("toy", modality) }
}

/// Plays a session to the end with simulated feedback.
fn play(ctx: &SearchContext, cfg: SessionConfig, pool: Option<&SimPool>) -> (Session, SessionSummary) {
    let relevant = ctx.corpus.members(cfg.target.as_deref().unwrap()).unwrap().clone();
    let modality = cfg.modality;
    let seed = cfg.seed;
    let mut session = Session::start("s", cfg, ctx.clone()).unwrap();
    loop {
        let round = session.round();
        let mut rng = ChaCha8Rng::seed_from_u64(round_seed(seed ^ 77, round));
        let event = simulate_feedback(round, &session.current_collage(), &relevant, modality, pool, &mut rng).unwrap();
        if let Advance::Summary(s) = session.submit_feedback(event).unwrap() {
            return (session, *s);
        }
    }
}

#[test]
fn first_collage_is_seeded() {
    let ctx = context(300);
    let a = Session::start("a", config(Modality::GazeClick, 5), ctx.clone()).unwrap();
    let b = Session::start("b", config(Modality::GazeClick, 5), ctx.clone()).unwrap();
    let c = Session::start("c", config(Modality::GazeClick, 6), ctx.clone()).unwrap();
    assert_eq!(a.current_collage(), b.current_collage());
    assert_ne!(a.current_collage(), c.current_collage());
    for id in c.current_collage() {
        assert!(ctx.corpus.position(&id).is_some());
    }
    assert_eq!(a.current_collage().len(), 15);
}

#[test]
fn fifteen_image_corpus_is_shown_whole() {
    let images = (0..15).map(|i| ImageRecord::new(format!("p{i:02}"), "").with_feature("f", vec![i as f64, 1.0])).collect();
    let corpus = Corpus::new("tiny", vec![FeatureSpec::imported("f", 2)], images).unwrap();
    let ctx = SearchContext::new(corpus, RelevancePredictor::neutral()).unwrap();
    let s = Session::start("t", SessionConfig::new("tiny", Modality::Click), ctx).unwrap();
    let mut shown = s.current_collage();
    shown.sort();
    let all: Vec<String> = (0..15).map(|i| format!("p{i:02}")).collect();
    assert_eq!(shown, all);
}

#[test]
fn start_errors() {
    let ctx = context(300);
    let wrong = SessionConfig::new("elsewhere", Modality::Click);
    assert!(matches!(Session::start("x", wrong, ctx.clone()), Err(Error::UnknownCorpus(_))));
    let cat = SessionConfig { target: Some("nope".into()), ..SessionConfig::new("toy", Modality::Click) };
    assert!(matches!(Session::start("x", cat, ctx.clone()), Err(Error::UnknownCategory(_))));
    let big = SessionConfig { collage_size: 301, ..SessionConfig::new("toy", Modality::Click) };
    assert!(Session::start("x", big, ctx.clone()).is_err());
    let zero = SessionConfig { rounds: 0, ..SessionConfig::new("toy", Modality::Click) };
    assert!(matches!(Session::start("x", zero, ctx), Err(Error::InvalidConfig(_))));
}

#[test]
fn feedback_errors() {
    let ctx = context(300);
    let mut s = Session::start("x", config(Modality::Click, 1), ctx.clone()).unwrap();
    assert!(matches!(
        s.submit_feedback(FeedbackEvent::empty(3)),
        Err(Error::RoundMismatch { expected: 0, got: 3 })
    ));
    let on_screen: BTreeSet<String> = s.current_collage().into_iter().collect();
    let off = ctx.corpus.images().iter().find(|i| !on_screen.contains(&i.id)).unwrap().id.clone();
    let stray = FeedbackEvent { clicks: vec![off], ..FeedbackEvent::empty(0) };
    assert!(matches!(s.submit_feedback(stray), Err(Error::NotShown(_))));
    let ghost = FeedbackEvent { clicks: vec!["ghost".into()], ..FeedbackEvent::empty(0) };
    assert!(matches!(s.submit_feedback(ghost), Err(Error::UnknownImage(_))));
    // Rejections leave the session untouched.
    assert_eq!(s.round(), 0);
    s.submit_feedback(FeedbackEvent::empty(0)).unwrap();
    assert!(matches!(s.submit_feedback(FeedbackEvent::empty(0)), Err(Error::RoundMismatch { expected: 1, got: 0 })));
}

#[test]
fn empty_feedback_scores_default_and_continues() {
    let ctx = context(300);
    let mut s = Session::start("x", config(Modality::GazeClick, 2), ctx).unwrap();
    match s.submit_feedback(FeedbackEvent::empty(0)).unwrap() {
        Advance::Collage(next) => assert_eq!(next.len(), 15),
        Advance::Summary(_) => panic!("session ended early"),
    }
    assert!(s.relevance().iter().all(|&r| r == 0.05));
}

#[test]
fn random_modality_ignores_feedback() {
    let ctx = context(300);
    let mut a = Session::start("a", config(Modality::Random, 9), ctx.clone()).unwrap();
    let mut b = Session::start("b", config(Modality::Random, 9), ctx).unwrap();
    for round in 0..4 {
        let collage = a.current_collage();
        let busy = FeedbackEvent { clicks: collage[..3].to_vec(), ..FeedbackEvent::empty(round) };
        a.submit_feedback(busy).unwrap();
        b.submit_feedback(FeedbackEvent::empty(round)).unwrap();
        assert_eq!(a.current_collage(), b.current_collage());
    }
}

#[test]
fn full_session_shows_150_distinct_images() {
    let ctx = context(300);
    let pool = pool();
    for modality in Modality::ALL {
        let (session, summary) = play(&ctx, config(modality, 11), Some(&pool));
        assert!(session.is_finished());
        assert_eq!(summary.collages.len(), 10);
        let all: Vec<&String> = summary.collages.iter().flatten().collect();
        assert_eq!(all.len(), 150);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 150, "{modality}");
        assert_eq!(summary.rounds.len(), 10);
        assert_eq!(summary.precision_curve.len(), 10);
        assert!(summary.average_precision.is_some());
        let eta_sum: f64 = summary.final_eta.iter().sum();
        assert!((eta_sum - 1.0).abs() < 1e-9);
        assert!(matches!(
            Session::clone(&session).submit_feedback(FeedbackEvent::empty(10)),
            Err(Error::SessionFinished)
        ));
    }
}

#[test]
fn short_final_collage_when_corpus_runs_out() {
    let ctx = context(100);
    let cfg = SessionConfig { rounds: 10, ..config(Modality::Click, 4) };
    let (_, summary) = play(&ctx, cfg, None);
    let total: usize = summary.collages.iter().map(Vec::len).sum();
    assert_eq!(total, 100);
    assert_eq!(summary.collages.last().unwrap().len(), 10);
}

#[test]
fn identical_transcripts_give_identical_summaries() {
    let ctx = context(300);
    let pool = pool();
    let (s1, a) = play(&ctx, config(Modality::GazeClick, 21), Some(&pool));
    let (_, b) = play(&ctx, config(Modality::GazeClick, 21), Some(&pool));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());

    // Replaying the event log, also after a JSON round trip, reproduces it.
    let log: Vec<String> = s1.events().iter().map(|e| serde_json::to_string(e).unwrap()).collect();
    let events: Vec<SessionEvent> = log.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let replayed = Session::replay(&events, ctx.clone()).unwrap();
    assert_eq!(replayed.summary().to_json().unwrap(), a.to_json().unwrap());

    let mut tampered = events.clone();
    let idx = tampered.iter().position(|e| matches!(e, SessionEvent::Collage { round: 3, .. })).unwrap();
    if let SessionEvent::Collage { images, .. } = &mut tampered[idx] {
        images.swap(0, 1);
    }
    assert!(matches!(Session::replay(&tampered, ctx), Err(Error::ReplayDiverged(3))));
}

#[test]
fn replay_of_unfinished_session_resumes() {
    let ctx = context(300);
    let mut s = Session::start("r", config(Modality::Click, 8), ctx.clone()).unwrap();
    for round in 0..3 {
        let click = FeedbackEvent { clicks: vec![s.current_collage()[round].clone()], ..FeedbackEvent::empty(round) };
        s.submit_feedback(click).unwrap();
    }
    let mut resumed = Session::replay(s.events(), ctx).unwrap();
    assert_eq!(resumed.round(), 3);
    assert_eq!(resumed.current_collage(), s.current_collage());
    assert_eq!(resumed.summary(), s.summary());
    let next_a = s.submit_feedback(FeedbackEvent::empty(3)).unwrap();
    let next_b = resumed.submit_feedback(FeedbackEvent::empty(3)).unwrap();
    assert_eq!(next_a, next_b);
}

/// A corpus of 1000 images where `cat` has 66 members (6.6%).
fn calibration_context() -> SearchContext {
    let images = (0..1000)
        .map(|i| {
            let r = ImageRecord::new(format!("q{i:04}"), "").with_feature("f", vec![1.0, (i % 7) as f64]);
            if i % 15 == 0 && i / 15 < 66 { r.with_label("cat") } else { r }
        })
        .collect();
    let corpus = Corpus::new("cal", vec![FeatureSpec::imported("f", 2)], images).unwrap();
    assert_eq!(corpus.members("cat").unwrap().len(), 66);
    SearchContext::new(corpus, RelevancePredictor::neutral()).unwrap()
}

#[test]
fn random_sessions_find_the_hypergeometric_mean() {
    let ctx = calibration_context();
    let expected = 150.0 * 66.0 / 1000.0;
    let mut total = 0usize;
    for seed in 0..200 {
        let cfg = SessionConfig { seed, target: Some("cat".into()), ..SessionConfig::new("cal", Modality::Random) };
        let (_, summary) = play(&ctx, cfg, None);
        total += summary.relevant_per_round.unwrap().iter().sum::<usize>();
    }
    let mean = total as f64 / 200.0;
    assert!((mean - expected).abs() <= 1.5, "mean {mean} vs {expected}");
}

#[test]
fn full_feedback_beats_random() {
    let ctx = context(300);
    let mut full = 0.0;
    let mut random = 0.0;
    for seed in 0..10 {
        let (_, f) = play(&ctx, config(Modality::Full, seed), None);
        let (_, r) = play(&ctx, config(Modality::Random, seed), None);
        full += f.relevant_per_round.unwrap().iter().sum::<usize>() as f64;
        random += r.relevant_per_round.unwrap().iter().sum::<usize>() as f64;
    }
    assert!(full > random, "{full} vs {random}");
}

#[test]
fn tensor_stage_runs_when_enabled() {
    let ctx = context(300);
    let pool = pool();
    let mut cfg = config(Modality::Gaze, 13);
    cfg.tensor.enabled = true;
    cfg.tensor.rank = 3;
    let (_, summary) = play(&ctx, cfg, Some(&pool));
    let tensor: Vec<_> = summary.rounds.iter().filter_map(|r| r.tensor.as_ref()).collect();
    assert!(!tensor.is_empty());
    assert!(tensor.iter().any(|t| t.applied && t.rank >= 1));
    for t in tensor.iter().filter(|t| t.applied) {
        assert!(t.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    // Click-only sessions have no gaze view, so the stage records a skip.
    let mut cfg = config(Modality::Click, 13);
    cfg.tensor.enabled = true;
    let (_, summary) = play(&ctx, cfg, None);
    let skipped: Vec<_> = summary.rounds.iter().filter_map(|r| r.tensor.as_ref()).collect();
    assert!(!skipped.is_empty());
    assert!(skipped.iter().all(|t| !t.applied && t.note.is_some()));
}
