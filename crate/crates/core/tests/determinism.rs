use chns::workbench::{parse_config, save_trajectory, Setup};

const RANDOM: &str = "[grid]\nnx = 12\nny = 10\nlx = 1.2\n[time]\ndt = 0.005\nsteps = 12\n\
                      [kernel]\namplitude = 56.0\n[initial]\npreset = \"random-seeded\"\nseed = 99\n\
                      mean = 0.1\nnoise = 0.3\nvelocity = 0.2\n";

fn run_to(path: &std::path::Path, text: &str) -> Vec<u8> {
    let s = Setup::new(&parse_config(text).unwrap()).unwrap();
    let v = s.random_control(5, 0.5).unwrap();
    save_trajectory(path, &s.simulate(v.values()).unwrap()).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn same_config_and_seed_give_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_to(&dir.path().join("a.ncht"), RANDOM);
    let b = run_to(&dir.path().join("b.ncht"), RANDOM);
    assert_eq!(a, b);
    let c = run_to(&dir.path().join("c.ncht"), &RANDOM.replace("seed = 99", "seed = 100"));
    assert_ne!(a, c);
}
