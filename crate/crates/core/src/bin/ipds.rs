fn main() {
    let code = ipds_core::cli::main_with(std::env::args(), std::env::var("IPDS_SEED").ok());
    std::process::exit(code);
}
