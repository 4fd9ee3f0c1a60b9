// temporary pilot runs; deleted before final
use succinct_dicts::matching::*;
use succinct_dicts::perm::Seed;

#[test]
#[ignore]
fn pilot_budgets() {
    for n in [64u64, 256, 1024] {
        let mut tot = 0u64;
        let mut costs = 0usize;
        let seeds = 100;
        for s in 0..seeds {
            let seed = Seed::new(0x1111 + s, 0x2222 ^ s);
            let inst = BallBinInstance::new((0..n).collect(), (10_000..10_000 + n).collect()).unwrap();
            let m = compute_matching(&inst, seed).unwrap();
            tot += m.rounds as u64;
            // composite insert ball+bin (minimap-style update)
            let (_, _, c) = apply_paired_update(
                &inst,
                UpdateOp::InsertBall(n + 1),
                UpdateOp::InsertBin(10_000 + n + 1),
                seed,
                &m,
            )
            .unwrap();
            costs += c;
        }
        println!(
            "n={n}: mean T = {:.2} (budget {:.1}), mean composite cost = {:.2} (budget {:.1})",
            tot as f64 / seeds as f64,
            2.0 * (n as f64).log2() + 6.0,
            costs as f64 / seeds as f64,
            2.0 * (n as f64).log2() + 6.0
        );
    }
    // bin insertion at |A|=512 (matching module example)
    let n = 512u64;
    let mut costs = 0usize;
    for s in 0..200 {
        let seed = Seed::new(0x3333 + s, 0x4444 ^ s);
        let inst = BallBinInstance::new((0..n).collect(), (10_000..10_000 + n).collect()).unwrap();
        let m = compute_matching(&inst, seed).unwrap();
        let (_, _, c) = apply_update(&inst, UpdateOp::InsertBin(20_000), seed, &m).unwrap();
        costs += c;
    }
    println!(
        "bin insert at n=512: mean cost {:.2} (budget {:.1})",
        costs as f64 / 200.0,
        4.0 * (2.0 * 512f64.log2() + 6.0)
    );
}
