use ebb_core::rnn::{self, Architecture, CellKind};
use ebb_core::timeseries::{DailyActivity, Trajectory};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[test]
#[ignore]
fn probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let traj = Trajectory {
        days: (0..60)
            .map(|_| DailyActivity {
                values: (0..8).map(|_| rng.gen_range(0.0..4.0)).collect(),
            })
            .collect(),
        end_time: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
    };
    for kind in CellKind::ALL {
        let arch = Architecture::new(kind, 32, 16, 8).unwrap();
        let params = rnn::init_parameters(&arch, 1);
        let start = std::time::Instant::now();
        let reps = 2000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let (loss, _) = rnn::backward(&params, &traj, 1.0).unwrap();
            acc += loss;
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        println!("{kind:?}: {:.3} ms/sample bw (acc {acc:.3})", per * 1e3);
        let start = std::time::Instant::now();
        for _ in 0..reps {
            acc += rnn::forward(&params, &traj).unwrap();
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        println!("{kind:?}: {:.3} ms/sample fw", per * 1e3);
    }
}
