//! The 200-record signals fixture against the brute-force counter.

use delegation_cues::ingest::{parse_comparisons, ParseMode};
use delegation_cues::signals::{SignalArtifact, SignalConfig, Tally};

use super::oracle::{brute_force, fixture_votes, Counts, SIGNALS_FIXTURE};
use super::SuiteResult;
use crate::ensure;

fn as_counts(a: &SignalArtifact) -> Counts {
    let pair = |t: &Tally| (t.hits, t.support);
    Counts {
        win: a.win.iter().map(|(k, t)| (k.clone(), pair(t))).collect(),
        tie: a.tie.iter().map(|(k, t)| (*k, pair(t))).collect(),
        global: a.global.iter().map(|(k, t)| (k.clone(), pair(t))).collect(),
    }
}

pub fn build(include_invalid: bool) -> SignalArtifact {
    let parsed = parse_comparisons(SIGNALS_FIXTURE.as_bytes(), ParseMode::Strict).expect("fixture parses");
    let clusters: Vec<usize> = fixture_votes(SIGNALS_FIXTURE).iter().map(|v| v.cluster).collect();
    let config = SignalConfig {
        include_invalid_in_win_support: include_invalid,
    };
    SignalArtifact::build(&parsed.records, &clusters, "tm-fixture", 0, config).expect("signals build")
}

/// Exact equality with the brute-force counts under both invalid-vote
/// settings, plus the hand-computed clusters.
pub fn suite() -> SuiteResult {
    let votes = fixture_votes(SIGNALS_FIXTURE);
    ensure!(votes.len() == 200, "fixture has {} records, expected 200", votes.len());
    let mut compared = 0;
    for include_invalid in [false, true] {
        let got = as_counts(&build(include_invalid));
        let want = brute_force(&votes, include_invalid);
        for (name, g, w) in [
            ("win", format!("{:?}", got.win), format!("{:?}", want.win)),
            ("tie", format!("{:?}", got.tie), format!("{:?}", want.tie)),
            ("global", format!("{:?}", got.global), format!("{:?}", want.global)),
        ] {
            ensure!(g == w, "{name} table differs (include_invalid={include_invalid})\n  got:  {g}\n  want: {w}");
        }
        compared += got.win.len() + got.tie.len() + got.global.len();
    }

    let a = build(false);
    let t = |hits, support| Some(Tally { hits, support });
    ensure!(a.tie_tally(6) == t(3, 3), "all-tie cluster: {:?}", a.tie_tally(6));
    ensure!(a.tie_rate(6) == Some(1.0), "all-tie cluster rate {:?}", a.tie_rate(6));
    ensure!(a.win_tally("alpha", 6) == t(0, 2), "alpha in the all-tie cluster: {:?}", a.win_tally("alpha", 6));
    ensure!(a.tie_tally(7) == t(2, 4), "mixed cluster: {:?}", a.tie_tally(7));
    ensure!(a.tie_tally(8).is_none(), "invalid-only cluster has tie support {:?}", a.tie_tally(8));
    ensure!(a.profile(8).is_empty(), "invalid-only cluster has win entries");
    ensure!(a.win_tally("delta", 5) == t(2, 5), "delta in cluster 5: {:?}", a.win_tally("delta", 5));
    ensure!(a.tie_tally(5).map(|t| t.rate()) == Some(0.4), "cluster 5 tie rate {:?}", a.tie_tally(5));
    ensure!(!a.models().contains(&"foxtrot".to_string()), "model seen only in invalid votes has a profile");
    let b = build(true);
    ensure!(b.global.get("foxtrot").is_some_and(|t| t.hits == 0 && t.support > 0), "invalid-inclusive support for foxtrot");
    ensure!(b.tie_tally(8).is_none(), "invalid votes leaked into tie support");

    Ok(format!("{compared} tallies equal to the brute-force counter"))
}
