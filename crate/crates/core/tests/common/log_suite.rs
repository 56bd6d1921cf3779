//! Accountability log suite: minimization by default, irrecoverable forget,
//! and replay after restart.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use delegation_cues::delegation::{
    AccountabilityEntry, Clock, FailingExecutor, LogError, LogItem, LogStore, ManualClock, MockExecutor,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures::toy_engine;
use super::SuiteResult;
use crate::ensure;

/// A prompt made of random six-letter tokens, so any token found in stored
/// bytes can only have come from this prompt.
pub fn secret_prompt(rng: &mut impl Rng) -> (String, Vec<String>) {
    let tokens: Vec<String> = (0..4)
        .map(|_| (0..6).map(|_| rng.random_range(b'a'..=b'z') as char).collect())
        .collect();
    (tokens.join(" "), tokens)
}

fn contains(haystack: &[u8], needle: &str) -> bool {
    haystack.windows(needle.len()).any(|w| w == needle.as_bytes())
}

fn everything(store: &LogStore) -> Vec<LogItem> {
    store.list(usize::MAX, None).items
}

fn export(store: &LogStore) -> Vec<u8> {
    let mut out = Vec::new();
    store.export_jsonl(&mut out).unwrap();
    out
}

struct Logged {
    entry: AccountabilityEntry,
    session_id: String,
    tokens: Vec<String>,
}

/// Every read path of one store must hide `forgotten` and the prompts of
/// non-retained sessions.
fn check_reads(store: &LogStore, logged: &[Logged], forgotten: &BTreeSet<u64>, raw: &[u8]) -> Result<(), String> {
    let listed = everything(store);
    let exported = export(store);
    let live: Vec<u64> = store.entries().map(|e| e.entry_id).collect();
    let tombs: Vec<u64> = store.tombstones().map(|t| t.entry_id).collect();
    for l in logged {
        let id = l.entry.entry_id;
        let gone = forgotten.contains(&id);
        let visible = !gone && l.entry.retained;
        if gone {
            ensure!(
                matches!(store.get(id), Err(LogError::Forgotten(t)) if t.entry_id == id),
                "get({id}) after forget returned {:?}",
                store.get(id)
            );
            ensure!(!live.contains(&id), "entries() still yields forgotten {id}");
            ensure!(tombs.contains(&id), "no tombstone for {id}");
            ensure!(
                listed.iter().any(|i| matches!(i, LogItem::Tombstone(t) if t.entry_id == id)),
                "list() shows no tombstone for {id}"
            );
            ensure!(
                !listed.iter().any(|i| matches!(i, LogItem::Entry(e) if e.entry_id == id)),
                "list() still shows forgotten {id}"
            );
        } else {
            let got = store.get(id).map_err(|e| format!("get({id}): {e}"))?;
            ensure!(*got == l.entry, "entry {id} changed: {got:?} vs {:?}", l.entry);
            ensure!(
                got.prompt_text.is_some() == got.retained && got.session_id.is_some() == got.retained,
                "entry {id} retention flag disagrees with its fields"
            );
        }
        for tok in &l.tokens {
            ensure!(
                contains(&exported, tok) == visible,
                "export shows prompt token of entry {id}: {} (forgotten {gone})",
                !visible
            );
            ensure!(
                contains(raw, tok) == visible,
                "log file bytes {} prompt token of entry {id} (forgotten {gone}, retained {})",
                if visible { "lack" } else { "contain" },
                l.entry.retained
            );
            let listed_json = serde_json::to_vec(&listed).unwrap();
            ensure!(contains(&listed_json, tok) == visible, "list() leaks prompt of entry {id}");
        }
        let sid_visible = contains(raw, &format!("\"{}\"", l.session_id));
        ensure!(sid_visible == visible, "session id of entry {id} visible={sid_visible}, expected {visible}");
    }
    Ok(())
}

pub fn suite(dir: &Path, sessions: usize, seed: u64) -> SuiteResult {
    let path = dir.join("accountability.log");
    let clock = Arc::new(ManualClock::new(1_800_000_000));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = LogStore::open(&path, clock.clone()).map_err(|e| e.to_string())?;

    let mut logged = Vec::new();
    for i in 0..sessions {
        // Alternate calm and risky thresholds so entries differ in shape.
        let engine = toy_engine(if i % 2 == 0 { 0.5 } else { 0.05 });
        let (prompt, tokens) = secret_prompt(&mut rng);
        let retain = match i % 5 {
            0 => Some(true),
            1 => Some(false),
            _ => None,
        };
        let session_id = format!("sess-{i:05}-{}", rng.random_range(100_000..1_000_000));
        let mut s = engine.open(session_id.clone(), &prompt, retain).map_err(|e| e.to_string())?;
        if i % 7 == 3 {
            engine.override_cluster(&mut s, 1).map_err(|e| e.to_string())?;
        } else {
            engine.confirm(&mut s).map_err(|e| e.to_string())?;
        }
        if s.clarification.is_some() {
            engine.clarify(&mut s, &prompt).map_err(|e| e.to_string())?;
        }
        clock.advance(3);
        let entry = if i % 11 == 5 {
            let _ = engine.execute(&mut s, &FailingExecutor { reason: "down".into() }, &mut store);
            store.entries().last().cloned().ok_or("failed session was not logged")?
        } else if i % 13 == 4 {
            engine.abandon(&mut s, "cut off", &mut store).map_err(|e| e.to_string())?
        } else {
            engine.execute(&mut s, &MockExecutor, &mut store).map_err(|e| e.to_string())?
        };
        ensure!(entry.retained == s.retain_prompt, "entry retention differs from session");
        logged.push(Logged {
            entry,
            session_id,
            tokens,
        });
    }
    let defaults = logged.iter().filter(|l| !l.entry.retained).count();
    ensure!(defaults > 0 && defaults < logged.len(), "need both retained and default entries");

    // Forget a third of the entries, including retained ones.
    let mut forgotten = BTreeSet::new();
    for l in &logged {
        if rng.random_bool(1.0 / 3.0) || l.entry.entry_id == 1 {
            clock.advance(1);
            let t = store.forget(l.entry.entry_id).map_err(|e| e.to_string())?;
            ensure!(t.deleted_at == clock.now(), "tombstone time {} vs clock {}", t.deleted_at, clock.now());
            forgotten.insert(l.entry.entry_id);
        }
    }
    ensure!(
        logged.iter().any(|l| l.entry.retained && forgotten.contains(&l.entry.entry_id)),
        "no retained entry was forgotten"
    );
    let first = *forgotten.iter().next().unwrap();
    ensure!(
        matches!(store.forget(first), Err(LogError::Forgotten(_))),
        "second forget of {first} did not report it as forgotten"
    );
    ensure!(
        matches!(store.forget(10_000_000), Err(LogError::NotFound(_))),
        "forgetting an unknown id did not fail with not found"
    );
    store.flush().map_err(|e| e.to_string())?;
    let raw = std::fs::read(&path).map_err(|e| e.to_string())?;
    check_reads(&store, &logged, &forgotten, &raw)?;

    // Restart: replay gives the same items, and ids continue.
    let before = everything(&store);
    let next = before.last().map_or(1, |i| i.entry_id() + 1);
    drop(store);
    let mut reopened = LogStore::open(&path, clock.clone()).map_err(|e| e.to_string())?;
    ensure!(everything(&reopened) == before, "replay after restart differs from the live store");
    check_reads(&reopened, &logged, &forgotten, &raw)?;

    // A torn trailing frame from a crash mid-append is dropped on replay.
    drop(reopened);
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(&path).map_err(|e| e.to_string())?;
        f.write_all(&[0, 0, 1, 0, b'{', b'"']).map_err(|e| e.to_string())?;
    }
    reopened = LogStore::open(&path, clock.clone()).map_err(|e| e.to_string())?;
    ensure!(everything(&reopened) == before, "torn tail changed the replayed items");
    let engine = toy_engine(0.5);
    let mut s = engine.open("after-restart", "one more request", None).map_err(|e| e.to_string())?;
    engine.confirm(&mut s).map_err(|e| e.to_string())?;
    let e = engine.execute(&mut s, &MockExecutor, &mut reopened).map_err(|e| e.to_string())?;
    ensure!(e.entry_id == next, "id after restart {} , expected {next}", e.entry_id);
    drop(reopened);
    let again = LogStore::open(&path, clock).map_err(|e| e.to_string())?;
    ensure!(again.get(next).map_err(|e| e.to_string())? == &e, "appended entry lost on reopen");

    Ok(format!(
        "{} entries ({} default, {} forgotten) hidden on every read path and stable across restart",
        logged.len(),
        defaults,
        forgotten.len()
    ))
}
