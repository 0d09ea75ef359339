//! Shared workload for the benchmarks: a synthetic market turned into
//! windows and graph Laplacians, without touching the filesystem.

use mgcgru::data::prepare;
use mgcgru::graphs::{build_industry_graph, build_shareholding_graph, build_topicality_graph};
use mgcgru::synth::generate_market;
use mgcgru::{GraphSet, Prepared, StockUniverse, SynthConfig};

pub struct Workload {
    pub universe: StockUniverse,
    pub prepared: Prepared,
    pub graphs: GraphSet,
}

impl Workload {
    pub fn new(n_stocks: usize, n_days: usize, lag: usize) -> Self {
        let config = SynthConfig { n_stocks, n_days, ..SynthConfig::default() };
        let market = generate_market(&config).expect("valid synthetic config");
        let universe = StockUniverse::new(market.ids.clone()).expect("unique ids");
        let prepared = prepare(&market.series, &universe, lag).expect("enough days");
        let graphs = GraphSet::from_adjacency(vec![
            build_shareholding_graph(&market.shareholding, &universe).unwrap(),
            build_industry_graph(&market.industry, &universe).unwrap(),
            build_topicality_graph(&market.topics, &universe).unwrap(),
        ]);
        Self { universe, prepared, graphs }
    }
}
