mod common;

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use common::{random_document, rng};
use docrel::protocol::{
    scorer_handler, serve, ClientConfig, ExternalPairScorer, ExternalRelationScorer, Handler, MentionContext, Op,
    ProtocolClient, Request, Response,
};
use docrel::relation::{NativeRelationScorer, RelationScorer, Template, TemplateFeaturizer};
use docrel::resolution::{PairFeaturizer, PairScorer, PairScoring};
use rand::Rng;

fn trained_like(seed: u64) -> NativeRelationScorer {
    let mut s = NativeRelationScorer::zeros(TemplateFeaturizer { bits: 12, max_n: 2 });
    let mut r = rng(seed);
    for w in s.model.weights.iter_mut() {
        *w = r.gen_range(-1.0..1.0);
    }
    s
}

fn templates(n: usize) -> Vec<Template> {
    (0..n)
        .map(|i| Template(vec!["[CLS]".into(), format!("w{}", i % 13), "[X1]".into(), format!("v{}", i % 5), "[X3]".into()]))
        .collect()
}

#[test]
fn remote_scores_equal_local_scores() {
    let local = Arc::new(trained_like(1));
    let server = serve("127.0.0.1:0", scorer_handler(Some(local.clone()), None)).unwrap();
    let client = Arc::new(ProtocolClient::new(server.addr(), ClientConfig::default()).unwrap());
    let mut remote = ExternalRelationScorer::new(client);
    remote.chunk = 7;
    let ts = templates(50);
    let want: Vec<f64> = ts.iter().map(|t| local.score(t).unwrap()).collect();
    assert_eq!(remote.score_many(&ts).unwrap(), want);
    assert_eq!(remote.score(&ts[3]).unwrap(), want[3]);
}

#[test]
fn pair_requests_carry_sentence_and_span() {
    let doc = random_document("d", &mut rng(5));
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let log = seen.clone();
    let handler: Handler = Arc::new(move |op: &Op| {
        log.lock().unwrap().push(op.clone());
        Ok(0.25)
    });
    let server = serve("127.0.0.1:0", handler).unwrap();
    let client = Arc::new(ProtocolClient::new(server.addr(), ClientConfig::default()).unwrap());
    let pair = ExternalPairScorer::new(client);
    let (a, b) = (&doc.mentions[0], doc.mentions.last().unwrap());
    assert_eq!(pair.score_pair(&doc, &a.id, &b.id).unwrap(), 0.25);
    let got = seen.lock().unwrap().clone();
    assert_eq!(got, vec![Op::ScorePair { x: MentionContext::of(&doc, a), y: MentionContext::of(&doc, b) }]);
    if let Op::ScorePair { x, .. } = &got[0] {
        assert_eq!(x.tokens[x.span.0..x.span.1].join(" "), a.surface);
    }
}

#[test]
fn served_pair_scorer_is_deterministic_and_bounded() {
    let mut scorer = PairScorer::zeros(PairFeaturizer::default());
    let mut r = rng(9);
    for w in scorer.model.weights.iter_mut() {
        *w = r.gen_range(-3.0..3.0);
    }
    let server = serve("127.0.0.1:0", scorer_handler(None, Some(Arc::new(scorer)))).unwrap();
    let client = Arc::new(ProtocolClient::new(server.addr(), ClientConfig::default()).unwrap());
    let pair = ExternalPairScorer::new(client);
    let doc = random_document("d", &mut r);
    for m in &doc.mentions {
        for n in &doc.mentions {
            let p = pair.score_pair(&doc, &m.id, &n.id).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(p, pair.score_pair(&doc, &m.id, &n.id).unwrap());
        }
    }
}

#[test]
fn concurrent_callers_get_their_own_answers() {
    let inflight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (i2, p2) = (inflight.clone(), peak.clone());
    let handler: Handler = Arc::new(move |op: &Op| {
        let now = i2.fetch_add(1, Ordering::SeqCst) + 1;
        p2.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_micros(200));
        i2.fetch_sub(1, Ordering::SeqCst);
        match op {
            Op::ScoreRelation { template } => Ok(template.len() as f64 / 100.0),
            Op::ScorePair { .. } => Err("no pairs".into()),
        }
    });
    let server = serve("127.0.0.1:0", handler).unwrap();
    let cfg = ClientConfig { max_connections: 3, ..ClientConfig::default() };
    let client = Arc::new(ProtocolClient::new(server.addr(), cfg).unwrap());
    let workers: Vec<_> = (0..12)
        .map(|w| {
            let c = client.clone();
            thread::spawn(move || {
                for round in 0..10 {
                    let n = 1 + (w + round) % 9;
                    let ops: Vec<Op> = (0..n).map(|k| Op::ScoreRelation { template: vec!["t".into(); k + 1] }).collect();
                    let got = c.call(ops).unwrap();
                    let want: Vec<f64> = (0..n).map(|k| (k + 1) as f64 / 100.0).collect();
                    assert_eq!(got, want);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    assert!(peak.load(Ordering::SeqCst) <= 3, "peak {}", peak.load(Ordering::SeqCst));
}

#[test]
fn handler_errors_and_bad_probabilities_surface() {
    let handler: Handler = Arc::new(|op: &Op| match op {
        Op::ScoreRelation { template } if template.len() == 1 => Ok(1.5),
        Op::ScoreRelation { .. } => Err("model not loaded".into()),
        Op::ScorePair { .. } => Ok(0.5),
    });
    let server = serve("127.0.0.1:0", handler).unwrap();
    let client = ProtocolClient::new(server.addr(), ClientConfig::default()).unwrap();
    let bad = client.call(vec![Op::ScoreRelation { template: vec!["a".into()] }]).unwrap_err();
    assert!(matches!(bad, docrel::Error::Domain(_)), "{bad}");
    let refused = client.call(vec![Op::ScoreRelation { template: vec!["a".into(), "b".into()] }]).unwrap_err();
    assert!(refused.to_string().contains("model not loaded"), "{refused}");
}

#[test]
fn raw_wire_exchange() {
    let server = serve("127.0.0.1:0", scorer_handler(Some(Arc::new(trained_like(2))), None)).unwrap();
    let mut s = TcpStream::connect(server.addr()).unwrap();
    let mut rd = BufReader::new(s.try_clone().unwrap());
    let req = Request { id: 41, op: Op::ScoreRelation { template: vec!["[CLS]".into(), "[X1]".into()] } };
    writeln!(s, "{}", serde_json::to_string(&req).unwrap()).unwrap();
    writeln!(s, "{{\"id\": 42, \"op\": \"score_everything\"}}").unwrap();
    writeln!(s, "not json").unwrap();
    writeln!(s, "{{\"id\": 43, \"op\": \"score_pair\"}}").unwrap();
    let mut read = || {
        let mut line = String::new();
        rd.read_line(&mut line).unwrap();
        serde_json::from_str::<Response>(&line).unwrap()
    };
    let ok = read();
    assert_eq!(ok.id, 41);
    assert!(ok.p.is_some() && ok.error.is_none());
    let unknown = read();
    assert_eq!((unknown.id, unknown.p.is_none(), unknown.error.is_some()), (42, true, true));
    let garbage = read();
    assert_eq!((garbage.id, garbage.error.is_some()), (0, true));
    let missing = read();
    assert_eq!((missing.id, missing.error.is_some()), (43, true));
}

#[test]
fn dead_server_exhausts_retries() {
    let server = serve("127.0.0.1:0", scorer_handler(None, None)).unwrap();
    let addr = server.addr().to_string();
    server.shutdown();
    let cfg = ClientConfig { attempts: 2, backoff_ms: 1, timeout_ms: 500, ..ClientConfig::default() };
    let client = ProtocolClient::new(addr, cfg).unwrap();
    match client.call(vec![Op::ScoreRelation { template: vec![] }]) {
        Err(docrel::Error::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("{other:?}"),
    }
}
