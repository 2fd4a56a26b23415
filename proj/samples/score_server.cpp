// Serves a questionnaire file on localhost:8080 with a journal in the
// working directory. Usage: score_server questionnaire.json [images_dir]
#include <iostream>

#include "vbfi/service.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: score_server questionnaire.json [images_dir]\n";
    return 1;
  }
  vbfi::ServiceConfig cfg;
  cfg.questionnaires.push_back(vbfi::load_questionnaire(argv[1]));
  if (argc > 2) cfg.images_dir = argv[2];
  vbfi::QuestionnaireService service(std::move(cfg));
  httplib::Server server;
  service.mount(server);
  std::cout << "listening on http://127.0.0.1:8080\n";
  return server.listen("127.0.0.1", 8080) ? 0 : 1;
}
