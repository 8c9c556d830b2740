fn main() {
    std::process::exit(seqcache::cli::main_with_args(std::env::args_os()));
}
