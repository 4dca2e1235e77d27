use deepretrieve::synth::{parse_ranking, RankingWarning};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ensure, Check};

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut sorted = order.to_vec();
    sorted.sort_unstable();
    sorted == (1..=n).collect::<Vec<_>>()
}

pub fn examples() -> Check {
    let r = parse_ranking("[2] > [1]", 2);
    ensure!(r.order == [2, 1] && r.warning.is_none(), "\"[2] > [1]\" gave {:?}", r);
    let r = parse_ranking("[1] > [1] > [3]", 3);
    ensure!(r.order == [1, 3, 2], "\"[1] > [1] > [3]\" gave {:?}", r.order);
    let r = parse_ranking("no ranking given", 3);
    ensure!(
        r.order == [1, 2, 3] && r.warning == Some(RankingWarning::Fallback),
        "fallback gave {:?}",
        r
    );
    Ok(())
}

fn fuzz_string(rng: &mut ChaCha8Rng, n: usize) -> String {
    const PIECES: &[&str] = &[
        "[", "]", " > ", ">", ",", " ", "-", "\n", "[[", "]]", "abc", "passage", "0", "00", "\u{00e9}", "[]", "> >",
    ];
    let len = rng.gen_range(0..40);
    let mut s = String::new();
    for _ in 0..len {
        match rng.gen_range(0..4) {
            0 => s.push_str(&format!("[{}]", rng.gen_range(0..n as i64 * 2 + 3) - 1)),
            1 => s.push_str(&rng.gen_range(0..10_000u32).to_string()),
            2 => s.push(char::from_u32(rng.gen_range(32..0x2000)).unwrap_or('?')),
            _ => s.push_str(PIECES.choose(rng).expect("non-empty")),
        }
    }
    s
}

pub fn fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..1000 {
        let n = rng.gen_range(1..=60);
        let s = fuzz_string(&mut rng, n);
        let r = parse_ranking(&s, n);
        ensure!(
            is_permutation(&r.order, n),
            "case {i}: {s:?} with n={n} gave {:?}",
            r.order
        );
    }
    Ok(())
}

pub fn all() -> Check {
    examples()?;
    fuzz()
}
