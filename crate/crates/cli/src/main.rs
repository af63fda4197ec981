fn main() {
    std::process::exit(pulsecorr::run(std::env::args_os()));
}
