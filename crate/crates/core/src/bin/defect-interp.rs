fn main() {
    std::process::exit(defect_interp::cli::run(std::env::args_os()));
}
