#![allow(dead_code)]

use smsmix::backends::{ToyBiEncoder, ToyHyper};
use smsmix::corpus::FrequencyTable;
use smsmix::synthetic::{self, SyntheticBenchmark, SyntheticConfig};

pub fn small_bench(seed: u64) -> SyntheticBenchmark {
    synthetic::generate(&SyntheticConfig {
        n_train: 300,
        eval_per_sense: 4,
        n_external: 60,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn trained(bench: &SyntheticBenchmark, seed: u64, epochs: usize) -> ToyBiEncoder {
    let hyper = ToyHyper {
        seed,
        epochs,
        ..ToyHyper::default()
    };
    smsmix::backends::toy_train(&bench.train, &bench.inventory, &hyper).unwrap().0
}

pub fn table(bench: &SyntheticBenchmark) -> FrequencyTable {
    FrequencyTable::from_corpus(&bench.train)
}
