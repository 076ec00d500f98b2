#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include <httplib.h>

#include "structsum/study.hpp"

namespace structsum::study {

/// JSON API over a StudyStore, plus an optional static directory for the
/// annotation front end.
///
///   GET  /api/next?annotator=ID   -> {"item_id", "question"} or {"done": true}
///   POST /api/reveal              {"annotator_id", "item_id"} -> context payload
///   POST /api/response            {"annotator_id", "item_id", "answer_text" | "unanswerable": true, "elapsed_ms"}
///   POST /api/grade               {"annotator_id", "item_id", "grade": "correct" | "incorrect"}
///   GET  /api/summary             -> overall and per-modality summaries
///
/// Errors come back as {"error": message} with 400 (bad body), 403 (not
/// assigned), 404 (unknown response) or 409 (already answered).
class StudyServer {
public:
    explicit StudyServer(StudyStore& store, std::optional<std::filesystem::path> static_dir = std::nullopt)
        : store_(store) {
        routes();
        if (static_dir && !server_.set_mount_point("/", static_dir->string()))
            throw ConfigError("static directory not found: " + static_dir->string());
    }

    /// Blocks until stop() is called.
    bool listen(const std::string& host, int port) { return server_.listen(host, port); }

    /// Binds an ephemeral port and returns it; call listen_after_bind() next.
    int bind_any_port(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
    bool listen_after_bind() { return server_.listen_after_bind(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    void stop() { server_.stop(); }

private:
    static void reply(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <typename Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const NotAssigned& e) {
            reply(res, 403, {{"error", e.what()}});
        } catch (const AlreadyAnswered& e) {
            reply(res, 409, {{"error", e.what()}});
        } catch (const NotFound& e) {
            reply(res, 404, {{"error", e.what()}});
        } catch (const SchemaError& e) {
            reply(res, 400, {{"error", e.what()}});
        } catch (const json::exception& e) {
            reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
        }
    }

    static json body_of(const httplib::Request& req) {
        auto j = json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw SchemaError("request body must be a JSON object");
        return j;
    }

    void routes() {
        server_.Get("/api/next", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                if (!req.has_param("annotator")) throw SchemaError("missing annotator parameter");
                auto item = store_.next_item(req.get_param_value("annotator"));
                if (!item) return reply(res, 200, {{"done", true}});
                reply(res, 200, {{"done", false}, {"item_id", item->item_id}, {"question", item->question}});
            });
        });
        server_.Post("/api/reveal", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto j = body_of(req);
                reply(res, 200, store_.reveal(j.at("annotator_id").get<std::string>(), j.at("item_id").get<std::string>()));
            });
        });
        server_.Post("/api/response", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto j = body_of(req);
                StudyResponse r;
                r.annotator_id = j.at("annotator_id").get<std::string>();
                r.item_id = j.at("item_id").get<std::string>();
                r.unanswerable = j.value("unanswerable", false);
                if (j.contains("answer_text") && !j.at("answer_text").is_null())
                    r.answer_text = j.at("answer_text").get<std::string>();
                r.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
                store_.record_response(r);
                reply(res, 200, {{"ok", true}});
            });
        });
        server_.Post("/api/grade", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto j = body_of(req);
                auto grade = grade_from_string(j.at("grade").get<std::string>());
                if (grade == Grade::ungraded) throw SchemaError("grade must be correct or incorrect");
                store_.grade_response(j.at("item_id").get<std::string>(), j.at("annotator_id").get<std::string>(), grade);
                reply(res, 200, {{"ok", true}});
            });
        });
        server_.Get("/api/summary", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] { reply(res, 200, store_.summary_json()); });
        });
    }

    StudyStore& store_;
    httplib::Server server_;
};

}  // namespace structsum::study
