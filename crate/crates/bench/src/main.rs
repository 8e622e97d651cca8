fn main() {
    std::process::exit(dtifl_bench::cli::run_from(std::env::args_os()));
}
