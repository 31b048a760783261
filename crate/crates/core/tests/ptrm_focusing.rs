use pstrack::ptrm::{q_profile, MirrorMode, TrackedChannel, Triplet};
use pstrack::waveform::{gen_hfm, HfmDirection, SignalParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_channel(rng: &mut ChaCha8Rng) -> TrackedChannel {
    let n = rng.random_range(2..=5);
    let mut delay = rng.random_range(0.3..0.4);
    let triplets = (0..n)
        .map(|i| {
            let t = Triplet {
                amplitude: if i == 0 { 1.0 } else { rng.random_range(0.3..0.9) },
                delay,
                doppler: rng.random_range(-4e-3..-1e-3) * if i % 2 == 0 { 1.0 } else { 0.5 },
            };
            delay += rng.random_range(5e-3..25e-3);
            t
        })
        .collect();
    TrackedChannel::new(1, triplets).unwrap()
}

#[test]
fn mean_focusing_ratio_orders_mirrors() {
    let probe = gen_hfm(&SignalParams::simulation(), HfmDirection::Up).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 50;
    let mut sums = [0.0; 3];
    for _ in 0..trials {
        let ch = random_channel(&mut rng);
        for (s, mode) in sums
            .iter_mut()
            .zip([MirrorMode::Conventional, MirrorMode::PathSpecific, MirrorMode::Compensated])
        {
            *s += q_profile(&ch, &ch, &probe, mode).unwrap().focusing_ratio();
        }
    }
    let [conv, ps, psc] = sums.map(|s| s / trials as f64);
    assert!(psc >= ps && ps >= conv, "conventional {conv:.3}, PS {ps:.3}, PSC {psc:.3}");
}
